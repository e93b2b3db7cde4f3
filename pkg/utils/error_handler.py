import logging
import traceback
from functools import wraps
from typing import Any, Callable, Optional

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


class SimulationError(Exception):
    """Simulator error with a user-facing message and optional technical details"""
    def __init__(self, message: str, technical_details: Optional[str] = None):
        self.message = message
        self.technical_details = technical_details
        super().__init__(message)


class ConfigError(SimulationError):
    """Scenario configuration violates an invariant"""


class DetectorError(SimulationError):
    """Detector preconditions violated (guards, dimensions, user count)"""


class DecoderError(SimulationError):
    """Decoder input does not match the trellis"""


def error_handler(user_message: str = "Simulation failed"):
    """Decorator mapping simulator errors of a CLI handler onto process exit codes"""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            try:
                return func(*args, **kwargs)
            except ConfigError as e:
                logger.error(f"❌ Configuration error in {func.__name__}: {e.message}")
                return EXIT_CONFIG_ERROR
            except SimulationError as e:
                logger.error(f"❌ {user_message}: {e.message} ({e.technical_details})")
                return EXIT_RUNTIME_ERROR
            except Exception:
                logger.error(f"Unexpected error in {func.__name__}: {traceback.format_exc()}")
                return EXIT_RUNTIME_ERROR
        return wrapper
    return decorator
