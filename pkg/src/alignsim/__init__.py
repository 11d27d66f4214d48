"""alignsim: plan, cost and simulate batch RNA-seq alignment campaigns on
serverless container backends.

The library half exposes the service catalog and feasibility rules
(:mod:`alignsim.catalog`), the workload model (:mod:`alignsim.workload`),
the cost model (:mod:`alignsim.costmodel`), the discrete-event simulator
(:mod:`alignsim.simulator`), the per-worker pipeline agent
(:mod:`alignsim.agent`) and the dispatch control plane
(:mod:`alignsim.dispatcher`). The CLI half lives in :mod:`alignsim.cli`.
"""

from .catalog import (
    FeasibilityReport,
    ReasonCode,
    ServiceSpec,
    StorageKind,
    StorageOption,
    Verdict,
    check_feasibility,
)
from .costmodel import (
    Backend,
    CostBreakdown,
    PricingTable,
    ResourceShape,
    VolumeSpec,
    campaign_cost,
    serverless_compute_cost,
    vm_compute_cost,
    volume_cost,
)
from .simulator import (
    BackendProfile,
    CampaignConfig,
    FailureModel,
    OptimizationFlags,
    SimResult,
    ThroughputModel,
    calibrate_throughput,
    simulate_campaign,
    summarize,
)
from .workload import (
    FileEntry,
    IndexSpec,
    WorkloadSpec,
    estimate_fastq_size,
    generate_synthetic_manifest,
    storage_demand,
)

__version__ = "0.1.0"
