"""Reference stdio backend for the aimcot wire protocol."""

from .server import BackendSession, serve
from .toymodel import ToyModel, ToyModelError, ToySpec

__all__ = ["BackendSession", "ToyModel", "ToyModelError", "ToySpec", "serve"]
