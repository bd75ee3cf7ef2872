"""Small-footprint CNN for rice disease and pest image classification.

From-scratch numpy implementation of the full training stack: tensors with
reverse-mode gradients, the Simple CNN architecture, two-stage training via
head replacement, image augmentation, stratified cross-validation and
diagnostic exports. Hot kernels optionally run through numba (see
ricecnn.backend).
"""

from .backend import active_backend, available_backends, set_backend
from .rng import RngState

__all__ = ["RngState", "active_backend", "available_backends", "set_backend"]
__version__ = "0.1.0"
