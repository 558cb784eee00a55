"""Python bindings for the slog core library."""

from ._slog import *  # noqa: F401,F403
from ._slog import __doc__  # noqa: F401
