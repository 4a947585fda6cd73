"""
Utility functions for the simulator
"""
import os
import sys
import logging
from datetime import datetime

import numpy as np

LOGGER_NAME = "flocksim"
DEFAULT_LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# Recorded in run manifests next to the seed
RNG_ALGORITHM = "numpy.random.PCG64"


def setup_logging(log_dir: str, prefix: str, level: str = "INFO",
                  fmt: str = DEFAULT_LOG_FORMAT) -> str:
    """Setup logging configuration"""
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = os.path.join(log_dir, f"{prefix}_{timestamp}.log")

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(fmt)
    # stderr keeps stdout free for CSV output
    for handler in (logging.FileHandler(log_file), logging.StreamHandler(sys.stderr)):
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    logger.propagate = False

    return log_file


def log_message(message: str, level: str = "info") -> None:
    """Log a message through the flocksim logger"""
    logger = logging.getLogger(LOGGER_NAME)
    getattr(logger, level, logger.info)(message)


def format_duration(seconds: float) -> str:
    """Format seconds into human-readable duration"""
    if seconds < 60:
        return f"{seconds:.1f} seconds"
    elif seconds < 3600:
        minutes = seconds / 60
        return f"{minutes:.1f} minutes"
    else:
        hours = seconds / 3600
        return f"{hours:.1f} hours"


def format_float(value: float) -> str:
    """Shortest round-trip representation of a float64"""
    return repr(float(value))


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; the algorithm id is written to every manifest"""
    return np.random.Generator(np.random.PCG64(seed))


def print_banner() -> None:
    """Print application banner"""
    from . import __version__
    print(f"""
╔═══════════════════════════════════════════════════════════════╗
║        flocksim - Euler-alignment flocking on the torus       ║
║                        version {__version__:<8}                       ║
╚═══════════════════════════════════════════════════════════════╝
    """, file=sys.stderr)


def validate_environment() -> bool:
    """Validate the environment is properly configured"""
    try:
        import scipy
        import yaml
        import pandas
        import cerberus
        return True
    except ImportError as e:
        print(f"❌ Missing required dependency: {e}", file=sys.stderr)
        print("Please run: pip install -r requirements.txt", file=sys.stderr)
        return False


def output_path(directory: str, filename: str, create: bool = True) -> str:
    """Join an output directory and file name, creating the directory"""
    if create:
        os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, filename)

