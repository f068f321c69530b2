# Class labels of the glyph dataset, in canonical order
LABELS = ("O", "N", "L", "X")

# Bipolar values of the two output neurons for each label.
# O and X are fixed by the published experiments, N and L complete the
# bijection onto {-1, 1}²
LABEL_OUTPUTS = {
    "O": (-1, -1),
    "N": (-1, 1),
    "L": (1, 1),
    "X": (1, -1),
}

# Side of the square input images
IMAGE_SIDE = 5

# Number of test images generated per class, each 2 pixels away from the
# training glyph of its class
TEST_PER_CLASS = 10
PERTURBED_PIXELS = 2

# Reference architectures: index, architecture string and the model sizes
# expected for a batch of 4 training images, as
# (neurons, connections, binary variables, integer groups, constraints)
NETWORKS = (
    ("conv2x2", (43, 96, 246, 72, 200)),
    ("conv2x2+fc4", (47, 136, 466, 88, 376)),
    ("conv3x3", (36, 99, 146, 44, 116)),
    ("conv3x3x2", (45, 198, 290, 80, 224)),
    ("conv3x3+fc4", (40, 125, 296, 60, 236)),
    ("conv4x4", (31, 72, 78, 24, 56)),
    ("conv4x4x2", (35, 144, 154, 40, 104)),
    ("conv4x4x2+fc4", (39, 168, 294, 56, 216)),
    ("fc1", (28, 27, 42, 12, 20)),
    ("fc2", (29, 54, 82, 16, 32)),
    ("fc3", (30, 81, 122, 20, 44)),
    ("fc4", (31, 108, 162, 24, 56)),
    ("fc5", (32, 135, 202, 28, 68)),
    ("fc6", (33, 162, 242, 32, 80)),
    ("fc7", (34, 189, 282, 36, 92)),
    ("fc8", (35, 216, 322, 40, 104)),
    ("fc9", (36, 243, 362, 44, 116)),
    ("fc10", (37, 270, 402, 48, 128)),
)

# Default annealing temperatures, given as inverse temperatures
DEFAULT_BETA_MIN = 0.2
DEFAULT_BETA_MAX = 8.6
DEFAULT_REPLICAS = 1000
DEFAULT_STEPS = 1000

# Nelder-Mead tuning defaults
DEFAULT_TUNE_BUDGET = 30
MIN_TUNE_BUDGET = 5
PILOT_RUNS = 3

# Largest number of free parameters (weight groups plus biases) the brute
# force oracle accepts
ORACLE_CAPACITY = 22

# Largest number of QUBO variables the oracle minimises by exhaustive search
ORACLE_EXHAUSTIVE_VARIABLES = 22

# Experiment grids
GAMMA_GRID = (0.0, 0.01, 0.02, 0.03, 0.05, 0.08, 0.10, 0.12)
DROPOUT_ETA_GRID = (0.01, 0.02, 0.05, 0.1, 0.5)
DROPOUT_NDROP_GRID = (0, 1, 2)
DROPOUT_BETA = 0.1
DROPOUT_ITERATIONS = 10
DROPOUT_INPUT_DROPS = 5

# Columns of the per-run results CSV
RUN_COLUMNS = (
    "network", "gamma", "eta", "n_drop", "seed", "train_acc", "test_acc",
    "s1", "s2", "unsat_frac", "energy", "feasible",
)
