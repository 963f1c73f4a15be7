import os
from dotenv import load_dotenv

load_dotenv()

TOOL_VERSION = "1.0.0"
ENV_PREFIX = "LOCALPR_"

# Relative KKT tolerance, in units of rho * alpha * d_i
DEFAULT_TOL = float(os.getenv("LOCALPR_TOL", 1e-8))
# Values at or below this are not reported as support
ZERO_THRESHOLD = float(os.getenv("LOCALPR_ZERO_THRESHOLD", 1e-14))
APPR_REFRESH_INTERVAL = int(os.getenv("LOCALPR_APPR_REFRESH_INTERVAL", 10000))
STAGEWISE_STRIDE = int(os.getenv("LOCALPR_STAGEWISE_STRIDE", 10))
# Multiplied by alpha to get the default stagewise step
STAGEWISE_ETA = float(os.getenv("LOCALPR_STAGEWISE_ETA", 1e-4))
POPULATION_MAX_NODES = int(os.getenv("LOCALPR_POPULATION_MAX_NODES", 5000))
DEGREE_MULTIPLIER = float(os.getenv("LOCALPR_DEGREE_MULTIPLIER", 1.0))
MAX_WORKERS = int(os.getenv("LOCALPR_MAX_WORKERS", 4))
LOG_LEVEL = os.getenv("LOCALPR_LOG_LEVEL", "INFO")


def env_overrides() -> dict[str, str]:
    """Collects LOCALPR_* variables as lower-case config keys (LOCALPR_RNG_SEED -> rng_seed)."""
    return {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in os.environ.items()
        if key.startswith(ENV_PREFIX)
    }
