"""Adaptation training loop, metrics, energy distance and PCA export."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from . import stgnn
from .alignment import METHODS, AlignmentConfig, alignment_terms
from .autodiff import Value
from .data import WindowedDataset
from .errors import DimensionMismatch, EmptyDataset, NonFiniteLoss, OutOfRange, ShapeMismatch
from .linalg import jacobi_eigen


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch: int = 64
    epochs: int = 150
    method: str = "tikuda"
    gamma_angle: float = 1e-2
    gamma_scale: float = 1e-3
    gamma_dist: float = 1.0  # weight of the single CORAL / MMD term
    schedule_gain: float = 10.0
    seed: int = 0
    holdout_fraction: float = 0.0
    eval_batch: int = 512
    max_energy_points: int = 1500

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if min(self.gamma_angle, self.gamma_scale, self.gamma_dist) < 0:
            raise ValueError("gamma weights must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {sorted(METHODS)}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")


TRACE_KEYS = ("total", "source", "angle", "scale", "dist", "lambda")


@dataclass
class MetricsReport:
    rmse_norm: float
    rmse_actual: float
    mae_norm: float
    mae_actual: float
    energy_distance: float = math.nan
    n_eval: int = 0
    traces: dict[str, list[float]] = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        return {
            "rmse_norm": self.rmse_norm,
            "rmse_actual": self.rmse_actual,
            "mae_norm": self.mae_norm,
            "mae_actual": self.mae_actual,
            "energy_distance": self.energy_distance,
            "n_eval": self.n_eval,
        }

    def to_kv(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.scalars().items())


def lambda_schedule(progress: float, gain: float = 10.0) -> float:
    """``2 / (1 + exp(-gain * p)) - 1``: 0 at the start, approaching 1 at the end."""
    if not 0.0 <= progress <= 1.0 or math.isnan(progress):
        raise OutOfRange(f"progress {progress} outside [0, 1]")
    return 2.0 / (1.0 + math.exp(-gain * progress)) - 1.0


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Value],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    b1c = 1.0 - beta1**state.t
    b2c = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
    return state


class BatchStream:
    """Endless stream of index batches; reshuffles whenever a pass is exhausted."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch, n)
        self.rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos : self._pos + self.batch]
        self._pos += self.batch
        return idx


def _check_pair(src: WindowedDataset, tgt: WindowedDataset):
    if len(src) == 0:
        raise EmptyDataset("source dataset has no windows")
    if len(tgt) == 0:
        raise EmptyDataset("target dataset has no windows")
    if src.samples.shape[1:] != tgt.samples.shape[1:]:
        raise DimensionMismatch(
            f"source windows {src.samples.shape[1:]} and target windows {tgt.samples.shape[1:]} differ"
        )


def _weights(cfg: TrainConfig, lam: float) -> tuple[float, float, float]:
    if cfg.method == "source-only":
        return 0.0, 0.0, 0.0
    if cfg.method in ("coral", "mmd"):
        return 0.0, 0.0, cfg.gamma_dist * lam
    return cfg.gamma_angle * lam, cfg.gamma_scale * lam, 0.0


def train_adapt(
    src: WindowedDataset,
    tgt: WindowedDataset,
    graph: stgnn.GraphSpec,
    model_cfg: stgnn.ModelConfig,
    cfg: TrainConfig,
    align_cfg: AlignmentConfig | None = None,
    label_range: float = 1.0,
    params: dict[str, Value] | None = None,
    on_epoch: Callable[[int, dict[str, float]], None] | None = None,
) -> tuple[dict[str, Value], MetricsReport]:
    """Minimise source MSE plus the ramped alignment terms, then evaluate on the target.

    Each step pairs one labelled source batch with one unlabelled target batch.
    With ``holdout_fraction > 0`` the final part of the target windows is kept
    out of training and used for evaluation.
    """
    _check_pair(src, tgt)
    align_cfg = align_cfg or AlignmentConfig()
    if (src.n_nodes, src.window, src.in_features) != (model_cfg.n_nodes, model_cfg.window, model_cfg.in_features):
        raise DimensionMismatch(f"windows {src.samples.shape[1:]} do not fit model config {model_cfg}")
    tgt_train, tgt_eval = (tgt, tgt) if cfg.holdout_fraction == 0 else tgt.split_tail(cfg.holdout_fraction)
    if len(tgt_train) == 0 or len(tgt_eval) == 0:
        raise EmptyDataset("holdout split leaves an empty target part")

    init_seq, src_seq, tgt_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    if params is None:
        params = stgnn.init_params(model_cfg, seed=int(init_seq.generate_state(1)[0]))
    src_stream = BatchStream(len(src), cfg.batch, np.random.default_rng(src_seq))
    tgt_stream = BatchStream(len(tgt_train), cfg.batch, np.random.default_rng(tgt_seq))
    steps_per_epoch = max(1, len(src) // cfg.batch)
    total_steps = steps_per_epoch * cfg.epochs
    state = AdamState()
    traces: dict[str, list[float]] = {k: [] for k in TRACE_KEYS}
    step = 0
    for epoch in range(cfg.epochs):
        acc = dict.fromkeys(TRACE_KEYS, 0.0)
        for _ in range(steps_per_epoch):
            lam = lambda_schedule(step / total_steps, cfg.schedule_gain)
            wa, ws, wd = _weights(cfg, lam)
            si = src_stream.next()
            ti = tgt_stream.next()
            for p in params.values():
                p.zero_grad()
            zs, pred = stgnn.forward(src.samples[si], graph, params, model_cfg)
            if not np.all(np.isfinite(pred.data)):
                raise NonFiniteLoss(f"non-finite source predictions at step {step} (epoch {epoch})")
            src_loss = ad.mean(ad.square(pred - src.labels[si]))
            total = src_loss
            terms = {}
            if wa > 0 or ws > 0 or wd > 0:
                zt, _ = stgnn.forward(tgt_train.samples[ti], graph, params, model_cfg)
                if not (np.all(np.isfinite(zs.data)) and np.all(np.isfinite(zt.data))):
                    raise NonFiniteLoss(f"non-finite features at step {step} (epoch {epoch})")
                terms = alignment_terms(cfg.method, zs, zt, align_cfg)
                for key, w in (("angle", wa), ("scale", ws), ("dist", wd)):
                    if key in terms and w > 0:
                        total = total + w * terms[key]
            if not np.isfinite(total.item()):
                raise NonFiniteLoss(f"loss became {total.item()} at step {step} (epoch {epoch})")
            ad.backward(total)
            adam_step(params, {k: p.grad for k, p in params.items()}, state, cfg.lr)
            acc["total"] += total.item()
            acc["source"] += src_loss.item()
            for key in ("angle", "scale", "dist"):
                if key in terms:
                    acc[key] += terms[key].item()
            acc["lambda"] += lam
            step += 1
        row = {k: v / steps_per_epoch for k, v in acc.items()}
        for k in TRACE_KEYS:
            traces[k].append(row[k])
        if on_epoch is not None:
            on_epoch(epoch, row)

    report = evaluate(params, graph, model_cfg, tgt_eval, label_range, batch=cfg.eval_batch)
    zs_all = extract_features(params, graph, model_cfg, src, cfg.eval_batch)
    zt_all = extract_features(params, graph, model_cfg, tgt_eval, cfg.eval_batch)
    report.energy_distance = energy_distance(*_subsample_pair(zs_all, zt_all, cfg.max_energy_points))
    report.traces = traces
    return params, report


def _subsample_pair(x, y, limit):
    def pick(a):
        if len(a) <= limit:
            return a
        return a[np.linspace(0, len(a) - 1, limit).round().astype(int)]

    return pick(x), pick(y)


def predict(params, graph, model_cfg, dataset: WindowedDataset, batch: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Features ``(B, N*d)`` and predictions ``(B, 1)`` for a whole dataset, no gradients kept."""
    frozen = ad.no_grad_copy(params)
    feats, preds = [], []
    for lo in range(0, len(dataset), batch):
        z, y = stgnn.forward(dataset.samples[lo : lo + batch], graph, frozen, model_cfg)
        feats.append(z.data)
        preds.append(y.data)
    if not feats:
        return np.zeros((0, model_cfg.feature_dim)), np.zeros((0, 1))
    return np.concatenate(feats), np.concatenate(preds)


def extract_features(params, graph, model_cfg, dataset, batch: int = 512) -> np.ndarray:
    return predict(params, graph, model_cfg, dataset, batch)[0]


def regression_metrics(pred, labels, label_range: float = 1.0) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise EmptyDataset("nothing to evaluate")
    if pred.shape != labels.shape:
        raise ShapeMismatch(f"{pred.shape} predictions for {labels.shape} labels")
    err = pred - labels
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    return MetricsReport(rmse, rmse * label_range, mae, mae * label_range, n_eval=pred.size)


def evaluate(params, graph, model_cfg, dataset: WindowedDataset, label_range: float = 1.0, batch: int = 512) -> MetricsReport:
    """RMSE/MAE on normalised labels and rescaled by the label's fitted range."""
    if len(dataset) == 0:
        raise EmptyDataset("evaluation dataset has no windows")
    _, pred = predict(params, graph, model_cfg, dataset, batch)
    return regression_metrics(pred, dataset.labels, label_range)


def energy_distance(x, y) -> float:
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` over all sample pairs (V-statistic)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"sample dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) == 0 or len(y) == 0:
        raise EmptyDataset("energy distance needs at least one sample per set")
    exy = cdist(x, y).mean()
    exx = cdist(x, x).mean()
    eyy = cdist(y, y).mean()
    return float(max(2.0 * exy - exx - eyy, 0.0))


@dataclass(frozen=True)
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (p, k)
    explained_variance: np.ndarray  # (k,)
    all_variances: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components


def pca_fit(features, k: int = 2) -> PCAResult:
    """Principal axes of ``features`` from the Jacobi eigendecomposition of the covariance.

    Each axis is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise EmptyDataset("PCA needs at least two samples")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    eig = jacobi_eigen(0.5 * (cov + cov.T))
    k = min(k, X.shape[1])
    comps = eig.eigenvectors[:, :k].copy()
    lead = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[lead, np.arange(k)])
    signs[signs == 0] = 1.0
    comps *= signs
    var = np.maximum(eig.eigenvalues, 0.0)
    return PCAResult(mean, comps, var[:k], var)


def pca_project(features, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top ``k`` principal axes; returns ``(points, explained_variance)``."""
    res = pca_fit(features, k)
    return res.transform(features), res.explained_variance


def run_seeds(seeds, fn: Callable[[int], MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and std of every scalar metric over runs ``fn(seed)``."""
    reports = [fn(s) for s in seeds]
    keys = reports[0].scalars().keys()
    return {
        k: (float(np.mean([r.scalars()[k] for r in reports])), float(np.std([r.scalars()[k] for r in reports])))
        for k in keys
    }
