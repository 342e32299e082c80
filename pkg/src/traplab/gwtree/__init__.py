"""Galton-Watson trees: analytics, lazy generation and biased walks."""
from __future__ import annotations

from .analytics import *  # noqa: F401,F403
from .analytics import __all__ as _a
from .arena import *  # noqa: F401,F403
from .arena import __all__ as _b
from .walks import *  # noqa: F401,F403
from .walks import __all__ as _c
from .walks import random_bias_stable_ks  # noqa: F401

__all__ = [*_a, *_b, *_c, "random_bias_stable_ks"]
