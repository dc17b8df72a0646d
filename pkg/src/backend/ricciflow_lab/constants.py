package_name = "ricciflow-lab"
app_name = "RicciFlowLab"
app_author = "ricciflow-lab"

# Grid
MIN_CELLS = 32
GHOST_LAYERS = 4
JET_STENCIL = 8
CFL = 0.4

# Termination thresholds, relative to max psi
EXTINCTION_RATIO = 1e-3
PINCH_RATIO = 1e-3
PSI_FLOOR_RATIO = 1e-8
DT_UNDERFLOW_RATIO = 1e-14
NECK_RESOLUTION_CELLS = 2.0

# Monitor tolerances
MONOTONE_REL = 1e-6
MONOTONE_ABS = 1e-10
MAX_MONOTONE_HALVINGS = 8
MINIMAL_REL = 1e-6
BISECTION_REL = 1e-8
RATE_REL = 1e-2
TIME_REL = 1e-2
SCALAR_REL = 1e-3
IDENTITY_TOL = 1e-6
HERSCH_TOL = 1e-6
SPECTRUM_ZERO = 1e-8
WIDTH_TIE_RTOL = 1e-9
POLE_SLOPE_TOL = 2e-2
POLE_SLOPE_PER_CELL = 8.0

# Conformal balancing
BALANCE_MAX_ITERATIONS = 200
BALANCE_MAX_STEP = 1.0
BALANCE_FD_STEP = 1e-6
ATOMIC_RATIO = 1e-6
ENERGY_REL = 5e-3
DEFAULT_BALANCE_LEVEL = 4
ENERGY_LEVEL = 5
ENERGY_LEVEL_NEAR_BOUNDARY = 6

# Spectrum
DEFAULT_L_MAX = 6

NEGATIVE_POLICY = "negative_minR"
NONNEGATIVE_POLICY = "nonnegative_minR"

termination_kinds = ("extinct", "pinched", "reached_t_max", "degenerate")
profile_kinds = ("round", "dumbbell", "samples", "random", "perturbed_round")
monitor_names = ("scalar_bound", "width_rate", "monotone", "neck", "hersch")

config_sections = ("profile", "flow", "monitors", "tolerances", "run")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_ERROR = 2

DEFAULT_OUTPUT_COUNT = 100

trajectory_columns = ("t", "psi_max", "psi_min_interior", "min_R", "total_arclength", "flag")
width_columns = ("t", "W", "x_argmax", "dq", "bound_rhs", "margin", "neck_area")
