"""smoothrl: a benchmark of action-smoothing methods for policy-gradient RL.

Implements loss-regularization methods (temporal/spatial action penalties,
interpolated-state actor/critic penalties), architectural methods (local
spectral normalization, per-layer Lipschitz budgets, Jacobian-normalized
outputs), and their hybrids, trained with clipped-surrogate PPO on
self-contained control environments and compared on cumulative return
versus FFT-based action smoothness.
"""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
