import logging
import os
import sys
from pathlib import Path

# Log level from QCMAP_LOG; stdout carries the JSON result, logs go to stderr
log_level_name = os.environ.get('QCMAP_LOG', 'WARNING').upper()
log_levels = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL
}
log_level = log_levels.get(log_level_name, logging.WARNING)

logging.basicConfig(
    level=log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S',
    stream=sys.stderr
)

logger = logging.getLogger(__name__)
logger.debug(f"Log level set to: {log_level_name}")

from provider.qcmap import QcmapProvider

provider = QcmapProvider.from_manifest(Path(__file__).resolve().parent / 'manifest.yaml')


def main(argv=None) -> int:
    return provider.run(argv)


if __name__ == '__main__':
    sys.exit(main())
