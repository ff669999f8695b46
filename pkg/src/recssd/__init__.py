"""recssd: discrete-event simulator and design-space explorer for in-storage
recommendation inference."""

from .events import Event, EventQueue
from .kernel_search import (ResourceModel, SearchOutcome, SearchSpace, StageTimes,
                            WorkloadProfile, estimate_times, resource_usage, search,
                            verify_constraints)
from .mlp_engine import (FcLayerSpec, KernelAssignment, PipelineSchedule, fc_cycles,
                         decompose_first_layer, mlp_forward_blocked, pipeline_schedule)
from .recmodel import (EmbeddingTable, Model, ModelSpec, Query, TableSpec, build_model,
                       desk_model_spec, ev_lookup_sum, generate_workload, mlp_forward,
                       reference_inference)
from .sim import (Metrics, Scenario, WorkloadConfig, compare, metrics_json, run)
from .storage import Ftl, SsdGeometry, TimingParams, host_block_read, page_read_time

__version__ = "0.1.0"
