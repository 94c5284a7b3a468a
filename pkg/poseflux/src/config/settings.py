import os

from dotenv import load_dotenv

from poseflux.src.models.errors import ConfigError

load_dotenv()


def env_int(name: str, default: int, minimum: int = 1) -> int:
    raw = os.getenv(name, str(default))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be at least {minimum}, got {value}")
    return value


# Skeleton layout
NUM_KEYPOINTS = 18
NOSE = 0
NECK = 1

# Pose-driven temperature map
DEFAULT_TAU = 3.0

# Re-targeting
DEFAULT_EPSILON_LEN = 1e-6

# Toy denoiser dimensions
DEFAULT_CHANNELS = 16
DEFAULT_FRAMES = 8
DEFAULT_LATENT_SIZE = 8
DEFAULT_HEAD_COUNT = 2
DEFAULT_LORA_RANK = 4
NUM_BLOCKS = 2

# Parameter initialisation scales
POSE_BIAS_STD = 0.5
APPEARANCE_BIAS_STD = 2.0
OUTPUT_BIAS_STD = 1.5
OUTPUT_NOISE_STD = 0.1
TIME_PROJ_SCALE = 0.3
FF_OUT_SCALE = 0.5

# Noise schedule
DEFAULT_STEPS_T = 100
DEFAULT_BETA1 = 1e-4
DEFAULT_BETAT = 0.02

# Training
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BATCH = 4
DEFAULT_SEED = 7
DEFAULT_TRAIN_STEPS = 500

# Synthetic data
CANVAS_SIZE = 64
DATASET_SIZE = 64
DATASET_FRAMES = 8
NECK_BLOB_SIGMA = 5.0
NOSE_BLOB_SIGMA = 3.0
CODEC_SEED = 20240101
# Brings blob latents to a mean energy of the same order as the unit noise.
LATENT_SCALE = 8.0

# File formats
CHECKPOINT_MAGIC = b"TCKPT"
CHECKPOINT_VERSION = 1
TMAP_MAGIC = b"TMAP"

# Runtime
WORKERS = env_int("POSEFLUX_WORKERS", 1)
LOG_LEVEL = os.getenv("POSEFLUX_LOG_LEVEL", "WARNING")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
