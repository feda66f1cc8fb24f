"""Tikhonov-regularised feature alignment for unsupervised domain adaptation in regression.

Modules:

* ``linalg``: Cholesky/SPD inverse, power iteration, Jacobi eigensolver.
* ``autodiff``: small reverse-mode tape over numpy matrices.
* ``alignment``: angle/scale alignment losses and the CORAL, MMD and DARE-GRAM baselines.
* ``stgnn``: GRU + graph-attention feature extractor and regression head.
* ``data``: CSV ingestion, scaling, windowing, graphs, synthetic domain shifts.
* ``trainer``: adaptation loop, metrics, energy distance, PCA.
* ``bench`` and ``cli``: timing harness and command-line entry point.
"""
from .errors import TikudaError

__version__ = "0.1.0"

__all__ = ["TikudaError", "__version__"]
