"""Tabular sensor series: ingestion, scaling, windowing, graphs, synthetic shifts.

A :class:`RawSeries` holds equally long columns, one of which is the label.
Every other column is one graph node with a single feature, so windows come
out as ``(B, N, T, 1)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import gaussian_kde

from .errors import (
    AsymmetricAdjacency,
    BadDimension,
    ConstantColumn,
    EmptyAfterCleaning,
    MissingColumn,
    SingularMixing,
)
from .stgnn import GraphSpec

EEG_CHANNELS = (
    "Fp1", "Fp2", "F3", "F4", "F7", "F8", "T3", "T4", "C3", "C4",
    "T5", "T6", "P3", "P4", "O1", "O2", "Fz", "Cz", "Pz",
)
EEG_ADJACENCY_RESOURCE = "eeg_10_20_adjacency.txt"


@dataclass(frozen=True)
class RawSeries:
    columns: tuple[str, ...]
    values: np.ndarray  # (length, n_columns)
    target: str
    dropped: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(self.columns):
            raise BadDimension(f"values shape {vals.shape} vs {len(self.columns)} columns")
        if self.target not in self.columns:
            raise MissingColumn(self.target)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def input_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.columns if c != self.target)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise MissingColumn(name) from None

    @property
    def inputs(self) -> np.ndarray:
        idx = [self.columns.index(c) for c in self.input_columns]
        return self.values[:, idx]

    @property
    def labels(self) -> np.ndarray:
        return self.column(self.target)

    def head(self, n: int) -> "RawSeries":
        return replace(self, values=self.values[:n])

    def tail(self, n: int) -> "RawSeries":
        return replace(self, values=self.values[len(self) - n :] if n else self.values[:0])


def _parse(cell: str | None) -> float:
    if cell is None:
        return math.nan
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, columns: Sequence[str] | None = None, target: str | None = None) -> RawSeries:
    """Read a headered CSV into a :class:`RawSeries`.

    ``columns`` lists the sensor and label columns to keep (all columns when
    omitted, minus a leading ``timestamp``/``time``/``date`` column).  ``target``
    defaults to the last kept column.  Rows with a missing or unparseable cell
    in any kept column are dropped and counted in ``RawSeries.dropped``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterCleaning(f"{path}: no header") from None
        if columns is None:
            columns = [h for h in header if h.lower() not in ("timestamp", "time", "date", "datetime")]
        columns = list(columns)
        if target is None:
            target = columns[-1]
        if target not in columns:
            columns.append(target)
        missing = [c for c in columns if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        idx = [header.index(c) for c in columns]
        rows = []
        dropped = 0
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            vals = [_parse(raw[i]) if i < len(raw) else math.nan for i in idx]
            if all(math.isfinite(v) for v in vals):
                rows.append(vals)
            else:
                dropped += 1
    if not rows:
        raise EmptyAfterCleaning(f"{path}: no complete rows ({dropped} dropped)")
    return RawSeries(tuple(columns), np.array(rows), target, dropped)


def save_csv(path, series: RawSeries) -> None:
    """Write ``series`` as a headered CSV; floats use ``repr`` so a re-read is exact."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.columns)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class Normalizer:
    """Per-column min-max scaling fitted on one domain and applied to any other."""

    columns: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, series: RawSeries) -> "Normalizer":
        mins = series.values.min(axis=0)
        maxs = series.values.max(axis=0)
        flat = [c for c, lo, hi in zip(series.columns, mins, maxs) if not hi > lo]
        if flat:
            raise ConstantColumn(f"column(s) {flat} are constant; min-max scaling is undefined")
        return cls(series.columns, mins, maxs)

    @property
    def span(self) -> np.ndarray:
        return self.maxs - self.mins

    def _check(self, series: RawSeries):
        if series.columns != self.columns:
            raise MissingColumn(f"normalizer columns {self.columns} != series columns {series.columns}")

    def apply(self, series: RawSeries) -> RawSeries:
        self._check(series)
        return replace(series, values=(series.values - self.mins) / self.span)

    def denormalize(self, series: RawSeries) -> RawSeries:
        self._check(series)
        return replace(series, values=series.values * self.span + self.mins)

    def label_range(self, target: str) -> float:
        return float(self.span[self.columns.index(target)])

    def denormalize_labels(self, y, target: str) -> np.ndarray:
        j = self.columns.index(target)
        return np.asarray(y) * self.span[j] + self.mins[j]


def fit_normalizer(src: RawSeries) -> Normalizer:
    return Normalizer.fit(src)


@dataclass(frozen=True)
class WindowedDataset:
    samples: np.ndarray  # (B, N, T, F)
    labels: np.ndarray  # (B, 1)
    starts: np.ndarray  # window start row in the source series
    domain: str = "source"
    node_names: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.samples.shape[1]

    @property
    def window(self) -> int:
        return self.samples.shape[2]

    @property
    def in_features(self) -> int:
        return self.samples.shape[3]

    def subset(self, idx) -> "WindowedDataset":
        return replace(self, samples=self.samples[idx], labels=self.labels[idx], starts=self.starts[idx])

    def split_tail(self, fraction: float) -> tuple["WindowedDataset", "WindowedDataset"]:
        """Chronological split: the last ``fraction`` of windows become the second part."""
        n = len(self)
        cut = n - int(round(fraction * n))
        return self.subset(slice(0, cut)), self.subset(slice(cut, n))


def window_count(length: int, T: int, stride: int) -> int:
    return (length - T) // stride + 1 if length >= T else 0


def make_windows(series: RawSeries, T: int, stride: int = 1, domain: str = "source") -> WindowedDataset:
    """Sliding windows over the input columns; each label is the target at the window's last step."""
    if T < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    X = series.inputs
    y = series.labels
    n = window_count(len(series), T, stride)
    N = X.shape[1]
    starts = np.arange(n, dtype=np.int64) * stride
    if n == 0:
        return WindowedDataset(np.zeros((0, N, T, 1)), np.zeros((0, 1)), starts, domain, series.input_columns)
    idx = starts[:, None] + np.arange(T)  # (n, T)
    samples = X[idx].transpose(0, 2, 1)[..., None]  # (n, N, T, 1)
    labels = y[starts + T - 1][:, None]
    return WindowedDataset(np.ascontiguousarray(samples), labels, starts, domain, series.input_columns)


def read_adjacency(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([float(t) for t in line.split()])
    widths = {len(r) for r in rows}
    if not rows or len(widths) != 1 or widths.pop() != len(rows):
        raise BadDimension(f"{path}: adjacency is not a square matrix")
    return np.array(rows)


def build_graph(kind: str, n: int, path=None) -> GraphSpec:
    """``kind='full'`` gives all-ones; ``kind='file'`` reads a 0/1 matrix and forces self-loops."""
    if n < 1:
        raise BadDimension("graph needs at least one node")
    if kind == "full":
        return GraphSpec.full(n)
    if kind not in ("file", "adjacency-file"):
        raise ValueError(f"unknown graph kind {kind!r}")
    if path is None:
        raise ValueError("graph kind 'file' needs a path")
    A = read_adjacency(path)
    if A.shape != (n, n):
        raise BadDimension(f"adjacency is {A.shape[0]}x{A.shape[1]}, expected {n}x{n}")
    if not np.all((A == 0) | (A == 1)):
        raise BadDimension("adjacency entries must be 0 or 1")
    if not np.array_equal(A, A.T):
        raise AsymmetricAdjacency(f"{path}: adjacency is not symmetric")
    np.fill_diagonal(A, 1.0)
    return GraphSpec(n, A)


def write_adjacency(path, adjacency) -> None:
    A = np.asarray(adjacency).astype(int)
    Path(path).write_text("\n".join(" ".join(str(v) for v in row) for row in A) + "\n")


def eeg_adjacency_path():
    return resources.files("tikuda").joinpath("resources", EEG_ADJACENCY_RESOURCE)


def eeg_graph() -> GraphSpec:
    """Nearest-neighbour graph of the 19 channels in :data:`EEG_CHANNELS` order."""
    with resources.as_file(eeg_adjacency_path()) as p:
        return build_graph("file", len(EEG_CHANNELS), p)


def subgraph(graph: GraphSpec, keep: Sequence[int]) -> GraphSpec:
    keep = list(keep)
    return GraphSpec(len(keep), graph.adjacency[np.ix_(keep, keep)])


def eeg_task_graph(target: str = "Fp1") -> tuple[GraphSpec, tuple[str, ...]]:
    """Graph over the EEG inputs once ``target`` is removed from the node set."""
    keep = [i for i, c in enumerate(EEG_CHANNELS) if c != target]
    return subgraph(eeg_graph(), keep), tuple(EEG_CHANNELS[i] for i in keep)


# ---------------------------------------------------------------- synthetic shift


@dataclass(frozen=True)
class ShiftSpec:
    """Affine-plus-mixing sensor shift applied to the target domain.

    ``target = mixing @ (gain * x + bias) + noise`` per time step, where ``x``
    holds the source sensor readings.  ``gain`` and ``bias`` are per sensor;
    ``noise_sigma`` is the std of fresh Gaussian noise drawn from ``seed``.
    ``label_gain``/``label_bias`` drift the target labels and default to no drift.
    """

    gain: tuple[float, ...]
    bias: tuple[float, ...]
    mixing: tuple[tuple[float, ...], ...] | None = None
    noise_sigma: float = 0.0
    label_gain: float = 1.0
    label_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.gain) != len(self.bias):
            raise BadDimension("gain and bias must have one entry per sensor")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        M = self.mixing_matrix
        if M.shape != (self.n_sensors, self.n_sensors):
            raise BadDimension(f"mixing matrix is {M.shape}, expected {self.n_sensors}x{self.n_sensors}")
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= 1e-10 * max(s[0], 1.0):
            raise SingularMixing(f"mixing matrix is singular (smallest singular value {s[-1]:.3g})")

    @property
    def n_sensors(self) -> int:
        return len(self.gain)

    @property
    def mixing_matrix(self) -> np.ndarray:
        if self.mixing is None:
            return np.eye(self.n_sensors)
        return np.array(self.mixing, dtype=np.float64)

    @classmethod
    def identity(cls, n: int, seed: int = 0) -> "ShiftSpec":
        return cls((1.0,) * n, (0.0,) * n, None, 0.0, 1.0, 0.0, seed)


def rotation_mixing(n: int, pairs: Sequence[tuple[int, int]], angle: float) -> np.ndarray:
    """Product of Givens rotations by ``angle`` in the listed sensor planes."""
    M = np.eye(n)
    c, s = math.cos(angle), math.sin(angle)
    for i, j in pairs:
        R = np.eye(n)
        R[i, i] = R[j, j] = c
        R[i, j], R[j, i] = -s, s
        M = R @ M
    return M


def latent_signals(n_steps: int, n_latent: int, rng: np.random.Generator, period: int = 24) -> np.ndarray:
    """Smooth latent drivers: AR(1) noise plus a daily-style cycle, each standardised."""
    t = np.arange(n_steps)
    out = np.empty((n_steps, n_latent))
    for j in range(n_latent):
        e = rng.standard_normal(n_steps)
        ar = np.empty(n_steps)
        ar[0] = e[0]
        for i in range(1, n_steps):
            ar[i] = 0.95 * ar[i - 1] + math.sqrt(1 - 0.95**2) * e[i]
        phase = rng.uniform(0, 2 * math.pi)
        sig = ar + 1.2 * np.sin(2 * math.pi * t / period + phase)
        out[:, j] = (sig - sig.mean()) / sig.std()
    return out


def ground_truth(latent: np.ndarray) -> np.ndarray:
    """Label as a fixed nonlinear function of the latent drivers."""
    l0 = latent[:, 0]
    l1 = latent[:, 1] if latent.shape[1] > 1 else 0.0
    l2 = latent[:, 2] if latent.shape[1] > 2 else 0.0
    return 2.0 + 0.8 * l0 + 0.4 * l1 - 0.3 * l2 + 0.2 * l0 * l1


def generate_base(
    n_steps: int = 3000,
    n_sensors: int = 6,
    seed: int = 0,
    clean_noise: float = 0.05,
    noisy_noise: float = 0.3,
) -> tuple[RawSeries, np.ndarray]:
    """Source-domain series with redundant sensors.

    Sensors come in pairs per latent driver: the first ``n_sensors // 2``
    columns are precise readings, the rest are noisy readings of the same
    drivers.  Returns ``(series, latent)``; the label column is ``"y"``.
    """
    if n_sensors < 2:
        raise BadDimension("need at least two sensors")
    rng = np.random.default_rng(seed)
    n_latent = (n_sensors + 1) // 2
    latent = latent_signals(n_steps, n_latent, rng)
    X = np.empty((n_steps, n_sensors))
    for k in range(n_sensors):
        j = k % n_latent
        sigma = clean_noise if k < n_latent else noisy_noise
        X[:, k] = latent[:, j] + sigma * rng.standard_normal(n_steps)
    y = ground_truth(latent)
    names = tuple(f"s{k}" for k in range(n_sensors)) + ("y",)
    return RawSeries(names, np.column_stack([X, y]), "y"), latent


def synthesize_shift(base: RawSeries, spec: ShiftSpec) -> tuple[RawSeries, RawSeries]:
    """Apply ``spec`` to the input columns of ``base``; returns ``(source, target)``."""
    X = base.inputs
    if X.shape[1] != spec.n_sensors:
        raise BadDimension(f"spec covers {spec.n_sensors} sensors, series has {X.shape[1]}")
    gain = np.asarray(spec.gain)
    bias = np.asarray(spec.bias)
    Xt = (gain * X + bias) @ spec.mixing_matrix.T
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        Xt = Xt + spec.noise_sigma * rng.standard_normal(Xt.shape)
    yt = spec.label_gain * base.labels + spec.label_bias
    values = np.empty_like(base.values)
    in_idx = [base.columns.index(c) for c in base.input_columns]
    values[:, in_idx] = Xt
    values[:, base.columns.index(base.target)] = yt
    return base, replace(base, values=values, dropped=0)


def default_shift_spec(n_sensors: int = 6, seed: int = 0) -> ShiftSpec:
    """Shift on the precise sensors only: gains, offsets and a small rotation among them."""
    n_clean = (n_sensors + 1) // 2
    base_gain = (2.0, 0.5, 1.8, 0.6, 1.5, 0.7)
    base_bias = (1.0, -0.8, 0.7, -0.6, 0.9, -0.5)
    gain = tuple(base_gain[k % 6] if k < n_clean else 1.0 for k in range(n_sensors))
    bias = tuple(base_bias[k % 6] if k < n_clean else 0.0 for k in range(n_sensors))
    pairs = [(i, i + 1) for i in range(0, n_clean - 1, 2)]
    M = rotation_mixing(n_sensors, pairs, math.radians(20.0))
    return ShiftSpec(gain, bias, tuple(map(tuple, M)), noise_sigma=0.02, seed=seed)


def scale_dominant_shift_spec(n_sensors: int = 6, seed: int = 0) -> ShiftSpec:
    """Large gains on the precise sensors, no offsets and only a slight rotation."""
    n_clean = (n_sensors + 1) // 2
    base_gain = (3.0, 0.3, 2.5, 0.4, 2.0, 0.5)
    gain = tuple(base_gain[k % 6] if k < n_clean else 1.0 for k in range(n_sensors))
    bias = (0.0,) * n_sensors
    pairs = [(i, i + 1) for i in range(0, n_clean - 1, 2)]
    M = rotation_mixing(n_sensors, pairs, math.radians(3.0))
    return ShiftSpec(gain, bias, tuple(map(tuple, M)), noise_sigma=0.02, seed=seed)


def kde_overlap(a, b, grid_size: int = 512) -> float:
    """Mean over columns of the overlap coefficient ``integral min(p_a, p_b)`` of Gaussian KDEs.

    1 means identical marginals, 0 means disjoint support.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64).T).T
    b = np.atleast_2d(np.asarray(b, dtype=np.float64).T).T
    if a.shape[1] != b.shape[1]:
        raise BadDimension("column counts differ")
    scores = []
    for j in range(a.shape[1]):
        x, y = a[:, j], b[:, j]
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        pad = 0.1 * (hi - lo + 1e-12)
        grid = np.linspace(lo - pad, hi + pad, grid_size)
        pa = gaussian_kde(x)(grid)
        pb = gaussian_kde(y)(grid)
        scores.append(float(np.trapezoid(np.minimum(pa, pb), grid)))
    return float(np.mean(scores))
