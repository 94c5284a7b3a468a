import logging
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from poseflux.src.config.settings import LOG_FORMAT, LOG_LEVEL

# Configure logging
logging.basicConfig(level=LOG_LEVEL.upper(), format=LOG_FORMAT)
logger = logging.getLogger("poseflux.app")

from poseflux.src.cli import run

if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
