"""
Configuration module for the course difficulty toolkit.
Loads environment variables and provides analysis defaults.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent
DATA_DIR = BASE_DIR / os.getenv("DATA_DIR", "data/files")
OUTPUT_DIR = BASE_DIR / os.getenv("OUTPUT_DIR", "output")

# Reproducibility
RANDOM_SEED = int(os.getenv("RANDOM_SEED", "42"))

# Grade data
MIN_OBSERVED_PER_STUDENT = int(os.getenv("MIN_OBSERVED_PER_STUDENT", "1"))
ORDINAL_MIN_CATEGORIES = 5
MISSING_TOKENS = ("", "nan", "na", "none", "null")

# Missingness
SIGNIFICANCE_LEVEL = float(os.getenv("SIGNIFICANCE_LEVEL", "0.05"))
MAR_PSEUDO_R2_CUTOFF = 0.1
LITTLE_SHRINKAGE_START = 0.01
REGRESSION_RIDGE = 1e-6
MIN_COURSE_OBSERVED_RATIO = 0.1
MIN_OVERALL_OBSERVED_RATIO = 0.6

# Correlation
TETRACHORIC_BOUND = 0.999
TETRACHORIC_TOL = 1e-6
TETRACHORIC_MIN_JOINT = 30
PSD_EIGEN_TOL = 1e-8

# Imputation
MIPCA_TOL = float(os.getenv("MIPCA_TOL", "1e-4"))
MIPCA_MAX_ITER = int(os.getenv("MIPCA_MAX_ITER", "100"))

# Dimensionality
VARIANCE_THRESHOLD = float(os.getenv("VARIANCE_THRESHOLD", "0.5"))
MAX_DIMENSIONS = int(os.getenv("MAX_DIMENSIONS", "3"))

# Latent models
AGM_TOL = 1e-8
AGM_MAX_ITER = 500
SIGMA2_FLOOR = 1e-12
IRT_RIDGE = float(os.getenv("IRT_RIDGE", "1e-4"))
IRT_THETA_RIDGE = float(os.getenv("IRT_THETA_RIDGE", "0.05"))
IRT_GRADIENT_TOL = 1e-6
IRT_MAX_EPOCHS = int(os.getenv("IRT_MAX_EPOCHS", "500"))
DEGENERATE_POLICY = os.getenv("DEGENERATE_POLICY", "exclude")  # or "penalize"
IRT_BIC_LIKELIHOOD = os.getenv("IRT_BIC_LIKELIHOOD", "marginal")  # or "joint"
MARGINAL_EM_TOL = 1e-7
MARGINAL_EM_MAX_ITER = int(os.getenv("MARGINAL_EM_MAX_ITER", "300"))
MIN_STUDENTS_PER_COURSE = 75
MIN_OFFERING_SIZE = int(os.getenv("MIN_OFFERING_SIZE", "75"))
BOOTSTRAP_REPS = int(os.getenv("BOOTSTRAP_REPS", "200"))
CI_LEVEL = 0.95

# Assumption checks
Q3_THRESHOLD = 0.2
Q3_MIN_JOINT = 10
RELIABILITY_THRESHOLD = 0.6
NOISE_MARGIN = 0.05

# Differential course functioning
DCF_MIN_GROUP = 10
DCF_TEST = os.getenv("DCF_TEST", "wald")  # or "lr"
FDR_Q = float(os.getenv("FDR_Q", "0.05"))

# Simulation defaults
SIM_STUDENTS = 2000
SIM_COURSES = 20
SIM_REPLICATES = 10
SIM_LOGIT_NOISE_SD = 0.5
SIM_DISCRIMINATION_SD = 0.25
SIM_ANGLE_JITTER = 0.05
SIM_TERMS = 10
CHOICE_BIAS_HIGH = 0.9
CHOICE_BIAS_LOW = 0.1
AMPUTATION_BASE_RATE = 0.1
AMPUTATION_MAX_DRAWS = 10
REGRESSION_REPEATS = 10
REGRESSION_TEST_FRACTION = 0.3
