"""Feature-alignment losses between a source and a target feature batch.

All losses take two ``b x p`` feature matrices (as :class:`Value`) and return
1x1 Values that can be back-propagated.  The Tikhonov-regularised losses and
the DARE-GRAM comparator use fused nodes whose backward passes go straight to
the feature matrix, so the cost of a backward pass is ``O(b p^2)`` instead of
materialising ``p x p`` gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from . import linalg
from .autodiff import Value, as_value, make_node
from .errors import DimensionMismatch, ShapeMismatch

SIMILARITIES = ("haversine", "cosine")


@dataclass
class AlignmentConfig:
    alpha: float = 1.0
    similarity: str = "haversine"
    power_iters: int = 50
    power_tol: float = 1e-7
    power_seed: int = 0
    epsilon_norm: float = 1e-12
    dare_gram_energy_threshold: float = 0.999
    mmd_bandwidth: Union[str, float] = "median"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        if not 0 < self.dare_gram_energy_threshold <= 1:
            raise ValueError("dare_gram_energy_threshold must lie in (0, 1]")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        if isinstance(self.mmd_bandwidth, str) and self.mmd_bandwidth != "median":
            self.mmd_bandwidth = float(self.mmd_bandwidth)


def _batch(z, min_rows: int = 1) -> Value:
    z = as_value(z)
    if z.ndim != 2:
        raise ShapeMismatch(f"feature batch must be 2-D (b x p), got shape {z.shape}")
    if z.shape[0] < min_rows or z.shape[1] < 1:
        raise ShapeMismatch(f"feature batch needs b >= {min_rows} and p >= 1, got shape {z.shape}")
    return z


def _pair(z_src, z_tgt, min_rows: int = 1) -> tuple[Value, Value]:
    z_src, z_tgt = _batch(z_src, min_rows), _batch(z_tgt, min_rows)
    if z_src.shape[1] != z_tgt.shape[1]:
        raise DimensionMismatch(
            f"source and target feature dims differ: {z_src.shape} vs {z_tgt.shape}"
        )
    return z_src, z_tgt


def tikhonov_matrix(z: np.ndarray, alpha: float) -> np.ndarray:
    G = z.T @ z
    G[np.diag_indices_from(G)] += alpha
    return G


def _inverse_node(z: Value, G: np.ndarray) -> Value:
    Z = z.data
    inv = linalg.spd_inverse(G)

    def bw(g):
        # d(G^-1) = -G^-1 dG G^-1 with dG = dZ^T Z + Z^T dZ
        S = g + g.T
        return (-(((Z @ inv) @ S) @ inv),)

    return make_node(inv, (z,), bw, "tikhonov_inverse")


def _lambda_node(z: Value, G: np.ndarray, iters: int, tol: float, seed: int) -> Value:
    Z = z.data
    lam, v, _ = linalg.power_iteration(G, iters, tol, seed, return_vector=True)

    def bw(g):
        return (2.0 * g.reshape(()) * np.outer(Z @ v, v),)

    return make_node(np.array([[lam]]), (z,), bw, "gram_lambda_max")


def tikhonov_inverse(z, alpha: float) -> Value:
    """``(Z^T Z + alpha I)^-1`` via Cholesky, differentiable in ``z``."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    z = _batch(z)
    return _inverse_node(z, tikhonov_matrix(z.data, alpha))


def gram_lambda_max(z, alpha: float, iters: int = 50, tol: float = 1e-7, seed: int = 0) -> Value:
    """Largest eigenvalue of ``Z^T Z + alpha I`` by power iteration (1x1 Value)."""
    z = _batch(z)
    return _lambda_node(z, tikhonov_matrix(z.data, alpha), iters, tol, seed)


def column_cosine(a, b, eps: float = 1e-12) -> Value:
    """Cosine between matching columns of two matrices, clamped to [-1, 1]; shape (1, p)."""
    a, b = as_value(a), as_value(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"column_cosine: shapes {a.shape} and {b.shape} differ")
    dots = ad.sum(a * b, axis=-2, keepdims=True)
    na = ad.clip(ad.l2_norm_cols(a), eps)
    nb = ad.clip(ad.l2_norm_cols(b), eps)
    return ad.clip(dots / (na * nb), -1.0, 1.0)


def haversine_similarity(cos_phi) -> Value:
    """``1 - sqrt((1 - cos phi) / 2)``, elementwise."""
    c = ad.clip(as_value(cos_phi), -1.0, 1.0)
    return 1.0 - ad.sqrt((1.0 - c) * 0.5)


def angle_loss(g_s_inv, g_t_inv, similarity: str = "haversine", eps: float = 1e-12) -> Value:
    """``sum_i (1 - m_i)`` where ``m_i`` compares column ``i`` of the two matrices.

    Evaluated through the chord ``d_i`` between the unit-normalised columns,
    using ``1 - cos = d^2 / 2`` and ``1 - HS = d / 2``.  This equals the
    cosine route exactly in real arithmetic, is exactly zero for equal
    columns and avoids the cancellation in ``1 - cos`` for small angles.
    """
    if similarity not in SIMILARITIES:
        raise ValueError(f"unknown similarity {similarity!r}")
    a, b = as_value(g_s_inv), as_value(g_t_inv)
    if a.shape != b.shape:
        raise ShapeMismatch(f"angle_loss: shapes {a.shape} and {b.shape} differ")
    ua = a / ad.clip(ad.l2_norm_cols(a), eps)
    ub = b / ad.clip(ad.l2_norm_cols(b), eps)
    chord = ad.l2_norm_cols(ua - ub)
    if similarity == "haversine":
        return ad.sum(chord) * 0.5
    return ad.sum(ad.square(chord)) * 0.5


def scale_loss(z_src, z_tgt, alpha: float = 1.0, cfg: AlignmentConfig | None = None) -> Value:
    """Squared gap between the dominant eigenvalues of the two Tikhonov matrices."""
    cfg = cfg or AlignmentConfig(alpha=alpha)
    z_src, z_tgt = _pair(z_src, z_tgt)
    ls = gram_lambda_max(z_src, alpha, cfg.power_iters, cfg.power_tol, cfg.power_seed)
    lt = gram_lambda_max(z_tgt, alpha, cfg.power_iters, cfg.power_tol, cfg.power_seed)
    return ad.square(ls - lt)


def tikuda_loss(z_src, z_tgt, cfg: AlignmentConfig | None = None) -> tuple[Value, Value]:
    """Angle and scale alignment terms between inverse Tikhonov matrices.

    Each Tikhonov matrix is formed once and shared by the inverse (angle
    term) and the power iteration (scale term).
    """
    cfg = cfg or AlignmentConfig()
    z_src, z_tgt = _pair(z_src, z_tgt)
    Gs = tikhonov_matrix(z_src.data, cfg.alpha)
    Gt = tikhonov_matrix(z_tgt.data, cfg.alpha)
    angle = angle_loss(_inverse_node(z_src, Gs), _inverse_node(z_tgt, Gt), cfg.similarity, cfg.epsilon_norm)
    ls = _lambda_node(z_src, Gs, cfg.power_iters, cfg.power_tol, cfg.power_seed)
    lt = _lambda_node(z_tgt, Gt, cfg.power_iters, cfg.power_tol, cfg.power_seed)
    return angle, ad.square(ls - lt)


def _covariance(z: Value) -> Value:
    b = z.shape[0]
    zc = z - ad.mean(z, axis=0, keepdims=True)
    return (zc.T @ zc) * (1.0 / (b - 1))


def coral_loss(z_src, z_tgt) -> Value:
    """``||C_s - C_t||_F^2 / (4 p^2)`` with unbiased centred covariances."""
    z_src, z_tgt = _pair(z_src, z_tgt, min_rows=2)
    p = z_src.shape[1]
    d = _covariance(z_src) - _covariance(z_tgt)
    return ad.sum(ad.square(d)) * (1.0 / (4.0 * p * p))


def _sq_dists(x: Value, y: Value) -> Value:
    xx = ad.sum(x * x, axis=1, keepdims=True)
    yy = ad.sum(y * y, axis=1, keepdims=True)
    return ad.clip(xx + yy.T - 2.0 * (x @ y.T), 0.0)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled batch (1.0 if degenerate)."""
    joint = np.vstack([x, y])
    if joint.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(joint)))
    return med if med > 0 else 1.0


def mmd_loss(z_src, z_tgt, bandwidth: Union[str, float] = "median") -> Value:
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    ``bandwidth="median"`` uses the median pairwise distance of the pooled
    batch; the bandwidth is treated as a constant for differentiation.
    """
    z_src, z_tgt = _pair(z_src, z_tgt)
    if isinstance(bandwidth, str):
        if bandwidth != "median":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        sigma = median_bandwidth(z_src.data, z_tgt.data)
    else:
        sigma = float(bandwidth)
    scale = -1.0 / (2.0 * sigma * sigma)

    def k(a, b):
        return ad.mean(ad.exp(_sq_dists(a, b) * scale))

    return k(z_src, z_src) + k(z_tgt, z_tgt) - 2.0 * k(z_src, z_tgt)


def _pinv_node(z: Value, w: np.ndarray, V: np.ndarray, k: int) -> Value:
    """Truncated pseudo-inverse ``V_k diag(1/w_k) V_k^T`` of ``Z^T Z``, differentiable in ``z``."""
    Z = z.data
    Vk = V[:, :k]
    wk = w[:k]
    P = (Vk / wk) @ Vk.T

    def bw(g):
        S = 0.5 * (g + g.T)
        Sk = V.T @ (S @ Vk)  # (p, k): <v_j, S v_i> for all j, kept i
        gap = wk[None, :] - w[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            C = np.where(np.abs(gap) > 1e-12 * max(wk[0], 1.0), 2.0 * Sk / (wk[None, :] * gap), 0.0)
        # kept-kept pairs: combined form has no gap in the denominator
        C[:k, :] = -Sk[:k, :] / (wk[:, None] * wk[None, :])
        idx = np.arange(k)
        C[idx, idx] = -Sk[idx, idx] / wk**2
        A = V @ C  # G_bar = A Vk^T
        return ((Z @ A) @ Vk.T + (Z @ Vk) @ A.T,)

    return make_node(P, (z,), bw, "gram_pinv")


def _top_eigs_node(z: Value, w: np.ndarray, V: np.ndarray, k: int) -> Value:
    Z = z.data
    Vk = V[:, :k]

    def bw(g):
        return (2.0 * ((Z @ Vk) * g.reshape(1, k)) @ Vk.T,)

    return make_node(w[:k].reshape(1, k).copy(), (z,), bw, "gram_top_eigs")


def dare_gram_loss(z_src, z_tgt, cfg: AlignmentConfig | None = None) -> tuple[Value, Value]:
    """Pseudo-inverse Gram alignment (DARE-GRAM style comparator).

    Both Gram matrices ``Z^T Z`` are fully eigendecomposed.  ``k`` is the
    larger of the two energy-threshold counts; the angle term is the cosine
    loss between columns of the truncated pseudo-inverses and the scale term
    is the mean squared difference of the ``k`` leading eigenvalues.
    """
    cfg = cfg or AlignmentConfig()
    z_src, z_tgt = _pair(z_src, z_tgt)
    thr = cfg.dare_gram_energy_threshold
    ws, Vs, ks = linalg.truncated_spectrum(z_src.data.T @ z_src.data, thr)
    wt, Vt, kt = linalg.truncated_spectrum(z_tgt.data.T @ z_tgt.data, thr)
    k = max(ks, kt, 1)

    def usable(w):
        floor = len(w) * np.finfo(float).eps * max(w[0], 0.0)
        return max(1, min(k, int(np.sum(w > floor))))

    Ps = _pinv_node(z_src, ws, Vs, usable(ws))
    Pt = _pinv_node(z_tgt, wt, Vt, usable(wt))
    angle = angle_loss(Ps, Pt, "cosine", cfg.epsilon_norm)
    es = _top_eigs_node(z_src, ws, Vs, k)
    et = _top_eigs_node(z_tgt, wt, Vt, k)
    scale = ad.mean(ad.square(es - et))
    return angle, scale


METHODS = frozenset({"source-only", "tikuda", "tikuda-cosine", "dare-gram", "coral", "mmd"})


def alignment_terms(method: str, z_src, z_tgt, cfg: AlignmentConfig) -> dict[str, Value]:
    """Alignment loss terms for a training method, keyed ``angle``/``scale``/``dist``."""
    if method == "source-only":
        return {}
    if method in ("tikuda", "tikuda-cosine"):
        sim = "cosine" if method == "tikuda-cosine" else cfg.similarity
        c = cfg if sim == cfg.similarity else AlignmentConfig(**{**cfg.__dict__, "similarity": sim})
        angle, scale = tikuda_loss(z_src, z_tgt, c)
        return {"angle": angle, "scale": scale}
    if method == "dare-gram":
        angle, scale = dare_gram_loss(z_src, z_tgt, cfg)
        return {"angle": angle, "scale": scale}
    if method == "coral":
        return {"dist": coral_loss(z_src, z_tgt)}
    if method == "mmd":
        return {"dist": mmd_loss(z_src, z_tgt, cfg.mmd_bandwidth)}
    raise ValueError(f"unknown method {method!r}")
