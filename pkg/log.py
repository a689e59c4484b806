# Process-wide logging setup. Import ``logging`` from here so the handlers
# exist before the first record is written.

import logging
import os

from definitions import LOG_DIR, LOG_LEVEL

# DEBUG: per-chunk / per-layer detail, shapes and counts.

# INFO: pipeline progress (sample counts, grid dims, loss records).

# WARNING: recoverable oddities (empty masks, empty meshes, clamped inputs).

# ERROR: a command failed; the exception is re-raised after logging.

# Create logs directory and log file
os.makedirs(LOG_DIR, exist_ok=True)
filename = os.path.join(LOG_DIR, "recon.log")

logging.basicConfig(filename=filename, level=getattr(logging, LOG_LEVEL, logging.INFO),
                    format='%(asctime)s:%(levelname)s:%(message)s')
