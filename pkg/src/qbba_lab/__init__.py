"""Desk-scale laboratory for query-based black-box attacks (QBBA) on a toy
vision transformer, with stochastic defenses and a trade-off evaluation
harness.

Everything is seeded: a single 64-bit seed reproduces any experiment
bit-exactly. Hot forward-pass kernels are JIT compiled with numba when
available; set QBBA_LAB_BACKEND=numpy to force the pure-numpy path.
"""

from qbba_lab.rng import RngStream
from qbba_lab.model import ModelConfig, ModelWeights, TOY_CONFIG, model_forward
from qbba_lab.defenses import DefenseConfig

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "ModelConfig",
    "ModelWeights",
    "TOY_CONFIG",
    "model_forward",
    "DefenseConfig",
    "__version__",
]
