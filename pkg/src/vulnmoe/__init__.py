"""vulnmoe: compact MoE transformer for C vulnerability detection.

Subsystems: a numpy-backed autograd engine, the MoE/GQA/RoPE classifier,
rank-weighted losses, the staged training driver, benchmark scoring,
and corpus curation (dual-verifier agreement, MinHash dedup, leakage).
"""

__version__ = "0.1.0"

from .autograd import Tensor, GradReport, grad_check

__all__ = ["Tensor", "GradReport", "grad_check", "__version__"]
