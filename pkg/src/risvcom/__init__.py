"""Channel estimation and joint beam/resource design for RIS-aided vehicular MIMO links."""
from .exceptions import RisError

__version__ = "0.1.0"

__all__ = ["RisError", "__version__"]
