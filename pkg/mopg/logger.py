import logging

from .config import Config

logging.basicConfig(level=getattr(logging, str(Config.LOG_LEVEL).upper(), logging.INFO))
logger = logging.getLogger('mopg')
