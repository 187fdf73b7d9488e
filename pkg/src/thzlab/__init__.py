"""Adaptive sub-band bandwidth and power allocation for indoor THz links.

Modules
-------
absorption   molecular absorption models, fitting and synthetic windows
spectrum     sub-band geometry and absorption-aware user pairing
scenario     room, link budget and user distances
rate         per-sub-band rates and the proportional-fair objective
neural       small feed-forward network with manual backpropagation
trainer      primal-dual unsupervised training loop
baseline     convex special case, equal-bandwidth baseline, grid oracle, KKT
experiments  end-to-end experiment runner
"""
from .errors import ThzLabError

__version__ = "0.1.0"
__all__ = ["ThzLabError", "__version__"]
