from .app import create_app
from .client import RemoteOracle

__all__ = ["create_app", "RemoteOracle"]
