"""Region-graph GBP estimates of RLL constraint capacities and AWGN information rates."""
from .constraint_model import INF, RllSpec, is_admissible, parse_spec
from .exact_oracle import brute_force_count, exact_count, transfer_matrix_count
from .free_energy import capacity_estimate, region_free_energy, shannon_bounds
from .gbp import GbpConfig, Method, Schedule, run_gbp
from .grid_graph import attach_evidence, build_factor_graph
from .info_rate import AwgnChannel, estimate_info_rate, snr_sweep
from .region_graph import build_region_graph, plan_basic_regions, validate_region_graph
from .sampler import draw_samples

__all__ = [
    "INF", "RllSpec", "is_admissible", "parse_spec",
    "brute_force_count", "exact_count", "transfer_matrix_count",
    "capacity_estimate", "region_free_energy", "shannon_bounds",
    "GbpConfig", "Method", "Schedule", "run_gbp",
    "attach_evidence", "build_factor_graph",
    "AwgnChannel", "estimate_info_rate", "snr_sweep",
    "build_region_graph", "plan_basic_regions", "validate_region_graph",
    "draw_samples",
]
__version__ = "0.1.0"
