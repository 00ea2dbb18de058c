"""
Minimal float64 neural-network engine with reverse-mode gradients.
"""
from app.services.nn.tensor import Tensor, grad  # noqa: F401
