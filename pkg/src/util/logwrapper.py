import logging
import os

logging.basicConfig(
    level=getattr(logging, os.environ.get('CIMTRAIN_LOG_LEVEL', 'INFO').upper(), logging.INFO),
    format='%(levelname)s:%(name)s:%(message)s'
)

_logger = logging.getLogger('cimtrain')


def _format(message: str, fields: dict) -> str:
    if not fields:
        return message
    return message + ' ' + ' '.join(f'{key}={value}' for key, value in fields.items())


def configure(level):
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    _logger.setLevel(level)


def debug(message: str, **fields):
    _logger.debug(_format(message, fields))


def info(message: str, **fields):
    _logger.info(_format(message, fields))


def warning(message: str, **fields):
    _logger.warning(_format(message, fields))


def error(message: str, **fields):
    _logger.error(_format(message, fields))
