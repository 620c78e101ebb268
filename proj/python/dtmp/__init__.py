"""Spatio-temporal graph forecasting on adaptively learned shift graphs."""

from dtmp._core import *  # noqa: F401,F403
from dtmp._core import __version__  # noqa: F401
