"""
global configuration of the project

External environment variables:

    WAVEDIFF_THREADS
    WAVEDIFF_LOGLEVEL
    WAVEDIFF_CACHE_SIZE
    WAVEDIFF_SLOW

"""

import logging
import os

MYDIR = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))

CONFIG_DIR = os.path.join(MYDIR, "config")
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, "train", "default.cfg")

try:
    THREADS = max(1, int(os.environ.get("WAVEDIFF_THREADS")))
except (TypeError, ValueError):
    THREADS = 4

LOGLEVEL = os.environ.get("WAVEDIFF_LOGLEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s %(message)s"

try:
    CACHE_SIZE = int(os.environ.get("WAVEDIFF_CACHE_SIZE"))
except (TypeError, ValueError):
    CACHE_SIZE = 256

RUN_SLOW = os.environ.get("WAVEDIFF_SLOW", "") == "1"

# dataset / checkpoint format versions
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

# file names inside a run directory
RUN_CONFIG = "config.cfg"
RUN_DATASET_CHECKSUM = "dataset.sha256"
RUN_FREQUENCY_SHIFT = "frequency_shift.csv"
RUN_LOSS_SPECTRUM = "loss_spectrum.csv"
RUN_EVAL = "eval.json"
RUN_BUNDLE_META = "bundle.json"
RUN_PROGRESS_LOG = "train.log"
RUN_EVAL_LOG = "eval.log"
RUN_ERRORS_LOG = "errors.log"


def setup_logging():
    """
    Configure the root logger for command line use.
    Diagnostics always go to stderr.
    """

    logging.basicConfig(level=LOGLEVEL, format=LOG_FORMAT)
