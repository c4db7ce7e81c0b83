import os

# Vehicle model defaults (Crazyflie-class quadrotor)
DEFAULT_RADIUS = 0.15
DEFAULT_V_MAX = 1.7
DEFAULT_A_MAX = 6.2
DEFAULT_C_DW = 2.0

# Planner defaults
DEFAULT_GRID_SIZE = 0.5
DEFAULT_ECBS_W = 1.3
DEFAULT_DEGREE = 5
DEFAULT_PHI = 3
DEFAULT_NUM_BATCHES = 1
DEFAULT_EXPAND_STEP = 0.1
DEFAULT_MAPF_TIMEOUT = 60.0
DEFAULT_RSFC_MARGIN = 1e-6

# Forest benchmark defaults
FOREST_BOUNDS = ((0.0, 0.0, 0.0), (10.0, 10.0, 2.5))
FOREST_N_TREES = 20
FOREST_TREE_XY = 0.3
FOREST_TREE_H_RANGE = (1.0, 2.5)
FOREST_START_HEIGHT = 1.0
FOREST_PLACEMENT_ATTEMPTS = 1000

# Numerical tolerances
GEOMETRY_TOL = 1e-9
FEASIBILITY_TOL = 1e-6
LIMIT_SLACK = 1e-6
SAMPLES_PER_TRAJECTORY = 10_000
MAX_EXACT_DEGREE = 20

PLANNER_CONFIG_PATH = os.getenv("SWARM_PLANNER_CONFIG", "config/planner_config.yaml")
DUMP_DIR = os.getenv("SWARM_PLANNER_DUMP_DIR", "dumps")
