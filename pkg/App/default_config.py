SERVICE_NAME = "calvin-planner"
ENV = "development"
LOG_LEVEL = "INFO"

# Experiment
PLANNER = "calvin"
MOTION = "positional"
BACKBONE = "oracle"
OBSERVABILITY = "full"
LR = 0.01
BETA = 1.0
K = 60
KERNEL_SIZE = 3
HIDDEN = 150
VIN_HIDDEN_ACTIONS = 40
LPN_HIDDEN = 32
EPOCHS = 30
BATCH_SIZE = 32
SEED = 0
GAMMA = 0.99
SAMPLE_CAP = 4
VALIDATION_FRACTION = 0.1
LOSS_Q_COEF = 1.0
LOSS_P_COEF = 1.0
LOSS_A_COEF = 1.0
LATTICE_N = 7
TRAJECTORIES = 1000
MAX_STEPS = None
WORKERS = 1
STRICT_GRIDS = False

# Evaluation
EVAL_MAZES = 100
EVAL_SEEDS = [0, 1, 2]
COLLISION_MAZES = 20

# Rendering
CELL_PIXELS = 8
RENDER_PNG = False

OUT_DIR = "runs/latest"
