import os
from typing import Dict

from dotenv import load_dotenv, dotenv_values

from exceptions import DataError

# Load environment variables from config.env file
load_dotenv('config.env')
# Also try loading from .env as fallback
load_dotenv()


# PATHS
ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
LOG_DIR = os.environ.get("RECON_LOG_DIR", os.path.join(ROOT_DIR, "logs"))
LOG_LEVEL = os.environ.get("RECON_LOG_LEVEL", "INFO").upper()

# file names inside a scene directory
SCENE_FILE = "scene.env"
MESH_FILE = "mesh.obj"
RGB_FILE = "rgb.tnsr"
DEPTH_FILE = "depth.tnsr"
NORMALS_FILE = "normals.tnsr"
MASK_FILE = "mask.tnsr"

# point-set stems inside a sample directory (<stem>_points/_sdf/_tag.tnsr)
BODY_STEM = "body"
DEPTH_STEM = "depth"
# depth-supervision points of a sample directory as a point cloud
DEPTH_CLOUD_FILE = "depth_points.ply"

TRAIN_LOG_FILE = "train_log.jsonl"
FINAL_CHECKPOINT = "final.tnsr"
METRICS_FILE = "metrics.jsonl"

# torch intra-op threads; 1 keeps reductions in a fixed order across machines
NUM_THREADS = int(os.environ.get("RECON_NUM_THREADS", "1"))

# EXIT CODES
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# acceptance experiments are opt-in
if os.environ.get("RECON_RUN_ACCEPTANCE") == "1":
    run_acceptance = True
else:
    run_acceptance = False


def read_config_file(path: str) -> Dict[str, str]:
    """Read a flat ``key = value`` config file into a dict of raw strings."""
    if not os.path.isfile(path):
        raise DataError(f"Config file not found: {path}")
    values = dotenv_values(path)
    config = {}
    for key, value in values.items():
        if value is None:
            raise DataError(f"Config key without value in {path}: {key}")
        config[key.strip().lower()] = value.strip()
    return config


def parse_config_value(raw: str, current):
    """Parse ``raw`` into the type of the field's current value."""
    raw = raw.strip()
    if isinstance(current, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"Expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        element = type(current[0]) if current else int
        return tuple(element(part) for part in raw.split(",") if part.strip())
    return raw


def format_config_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_config_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
