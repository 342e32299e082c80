"""Simulation toolkit for trapped random walks: trap models, random walks in
random environments on Z, biased walks on Galton-Watson trees and on
percolation clusters, and walks on critical trees."""
from __future__ import annotations

__version__ = "0.1.0"
