"""Time-then-space feature extractor and regression head.

Pipeline per sample ``x`` of shape ``(N sensors, T steps, F features)``:

1. linear encoder on ``[x_{n,t} || e_n]`` where ``e_n`` is a learned sensor embedding,
2. a stack of GRU layers run independently per sensor,
3. one single-head graph attention layer over the last hidden state,
4. the node outputs are flattened into the feature vector ``z`` (length ``N*d``)
   and a linear head maps ``z`` to the scalar prediction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value, as_value, make_node
from .errors import IsolatedNode, ShapeMismatch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GraphSpec:
    n_nodes: int
    adjacency: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.shape != (self.n_nodes, self.n_nodes):
            raise ShapeMismatch(f"adjacency shape {A.shape} does not match n_nodes={self.n_nodes}")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency must be binary")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if not np.all(np.diag(A) == 1):
            raise ValueError("adjacency must carry self-loops on the diagonal")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def full(cls, n: int) -> "GraphSpec":
        return cls(n, np.ones((n, n)))


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    in_features: int = 1
    window: int = 16
    hidden: int = 16
    gru_layers: int = 4
    embed_dim: int = 16
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.hidden < 1 or self.gru_layers < 1 or self.window < 1:
            raise ValueError("hidden, gru_layers and window must all be >= 1")
        if self.n_nodes < 1 or self.in_features < 1 or self.embed_dim < 0:
            raise ValueError("n_nodes and in_features must be >= 1, embed_dim >= 0")

    @property
    def feature_dim(self) -> int:
        return self.n_nodes * self.hidden


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Value]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    d, F, e = cfg.hidden, cfg.in_features, cfg.embed_dim
    shapes: dict[str, tuple[tuple[int, ...], int]] = {
        "embedding": ((cfg.n_nodes, e), e),
        "enc.W_x": ((F, d), F + e),
        "enc.W_e": ((e, d), F + e),
        "enc.b": ((1, d), F + e),
    }
    for layer in range(cfg.gru_layers):
        shapes[f"gru{layer}.W_i"] = ((d, 3 * d), d)
        shapes[f"gru{layer}.W_h"] = ((d, 3 * d), d)
        shapes[f"gru{layer}.b_i"] = ((1, 3 * d), d)
        shapes[f"gru{layer}.b_h"] = ((1, 3 * d), d)
    shapes["gat.W"] = ((d, d), d)
    shapes["gat.a_src"] = ((d, 1), 2 * d)
    shapes["gat.a_dst"] = ((d, 1), 2 * d)
    shapes["reg.w"] = ((cfg.feature_dim, 1), cfg.feature_dim)
    shapes["reg.b"] = ((1, 1), cfg.feature_dim)
    return {name: ad.parameter(_uniform(rng, fan, shape), name=name) for name, (shape, fan) in shapes.items()}


def encode(x, params: dict[str, Value], cfg: ModelConfig) -> Value:
    """Project ``[x_{n,t} || e_n]`` to ``hidden`` dims; ``(B,N,T,F) -> (B,N,T,d)``."""
    x = as_value(x)
    if x.ndim != 4 or x.shape[1:] != (cfg.n_nodes, cfg.window, cfg.in_features):
        raise ShapeMismatch(
            f"encode: expected input (B, {cfg.n_nodes}, {cfg.window}, {cfg.in_features}), got {x.shape}"
        )
    out = x @ params["enc.W_x"]
    if cfg.embed_dim > 0:
        node_term = params["embedding"] @ params["enc.W_e"]  # (N, d)
        out = out + ad.reshape(node_term, (1, cfg.n_nodes, 1, cfg.hidden))
    return out + params["enc.b"]


def _sigmoid_inplace(x):
    x *= 0.5
    np.tanh(x, out=x)
    x += 1.0
    x *= 0.5


def gru_layer(seq, W_i, W_h, b_i, b_h, h0=None) -> Value:
    """One GRU layer over ``seq`` of shape ``(..., T, d_in)``.

    ``h0`` is a constant initial state broadcastable to ``(..., d)``; zero by default.

    Gate order in the stacked weights is (reset, update, candidate)::

        r = sigma(x W_ir + b_ir + h W_hr + b_hr)
        z = sigma(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h

    Returns every hidden state, shape ``(..., T, d)``.  Backward is
    hand-written back-propagation through time.
    """
    seq, W_i, W_h, b_i, b_h = (as_value(v) for v in (seq, W_i, W_h, b_i, b_h))
    lead = seq.shape[:-2]
    T, d_in = seq.shape[-2:]
    d = W_h.shape[0]
    if W_i.shape != (d_in, 3 * d) or W_h.shape != (d, 3 * d):
        raise ShapeMismatch(f"gru_layer: W_i {W_i.shape}, W_h {W_h.shape} for input dim {d_in}")
    X = seq.data.reshape(-1, T, d_in)
    R = X.shape[0]
    Wi, Wh = W_i.data, W_h.data
    bi, bh = b_i.data.reshape(3 * d), b_h.data.reshape(3 * d)

    # time-major storage keeps every per-step slice contiguous
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))  # (T, R, d_in)
    GI = Xt @ Wi + bi  # (T, R, 3d)
    H = np.zeros((T + 1, R, d))
    if h0 is not None:
        H[0] = np.broadcast_to(np.asarray(h0, dtype=np.float64), (*lead, d)).reshape(R, d)
    RZ = np.empty((T, R, 2 * d))  # reset and update gates
    N_ = np.empty((T, R, d))
    HN = np.empty((T, R, d))
    for t in range(T):
        h = H[t]
        gh = h @ Wh
        gh += bh
        gi = GI[t]
        rz = RZ[t]
        np.add(gi[:, : 2 * d], gh[:, : 2 * d], out=rz)
        _sigmoid_inplace(rz)
        r, z = rz[:, :d], rz[:, d:]
        hn = HN[t]
        hn[...] = gh[:, 2 * d :]
        n = N_[t]
        np.multiply(r, hn, out=n)
        n += gi[:, 2 * d :]
        np.tanh(n, out=n)
        # h' = n + z * (h - n)
        h_next = H[t + 1]
        np.subtract(h, n, out=h_next)
        h_next *= z
        h_next += n
    out = H[1:].transpose(1, 0, 2).reshape(*lead, T, d)

    def bw(g):
        G = g.reshape(R, T, d).transpose(1, 0, 2)
        dGI = np.empty((T, R, 3 * d))
        dGH = np.empty((T, R, 3 * d))
        WhT = np.ascontiguousarray(Wh.T)
        dh = np.zeros((R, d))
        for t in range(T - 1, -1, -1):
            dh += G[t]
            r, z = RZ[t, :, :d], RZ[t, :, d:]
            n, hn, h = N_[t], HN[t], H[t]
            dgi = dGI[t]
            dgh = dGH[t]
            dn_pre = dgi[:, 2 * d :]
            np.multiply(dh, 1.0 - z, out=dn_pre)
            dn_pre *= 1.0 - n * n
            np.multiply(dn_pre, r, out=dgh[:, 2 * d :])
            dr_pre = dgi[:, :d]
            np.multiply(dn_pre, hn, out=dr_pre)
            dr_pre *= r * (1.0 - r)
            dz_pre = dgi[:, d : 2 * d]
            np.subtract(h, n, out=dz_pre)
            dz_pre *= dh
            dz_pre *= z * (1.0 - z)
            dgh[:, : 2 * d] = dgi[:, : 2 * d]
            dh *= z
            dh += dgh @ WhT
        flat_i = dGI.reshape(-1, 3 * d)
        flat_h = dGH.reshape(-1, 3 * d)
        dX = (dGI @ Wi.T).transpose(1, 0, 2).reshape(seq.shape)
        dWi = Xt.reshape(-1, d_in).T @ flat_i
        dWh = H[:-1].reshape(-1, d).T @ flat_h
        dbi = flat_i.sum(axis=0).reshape(1, 3 * d)
        dbh = flat_h.sum(axis=0).reshape(1, 3 * d)
        return dX, dWi, dWh, dbi, dbh

    return make_node(out, (seq, W_i, W_h, b_i, b_h), bw, "gru_layer")


def gru_forward(seq, params: dict[str, Value], cfg: ModelConfig) -> Value:
    """Stacked GRU; ``(B,N,T,d) -> (B,N,d)``, the top layer's final hidden state."""
    h = as_value(seq)
    for layer in range(cfg.gru_layers):
        h = gru_layer(
            h,
            params[f"gru{layer}.W_i"],
            params[f"gru{layer}.W_h"],
            params[f"gru{layer}.b_i"],
            params[f"gru{layer}.b_h"],
        )
    return h[..., -1, :]


def gat_forward(h, graph, params: dict[str, Value], slope: float = 0.2, return_attention: bool = False):
    """Single-head graph attention over ``h`` of shape ``(B, N, d)``.

    ``e_uv = LeakyReLU(a_src . W h_u + a_dst . W h_v)`` for ``v`` in the
    neighbourhood of ``u`` (non-zero adjacency entries), softmax-normalised
    per ``u``; node ``u`` outputs ``sum_v alpha_uv W h_v``.

    ``graph`` is a :class:`GraphSpec` or a raw ``N x N`` adjacency array.
    """
    h = as_value(h)
    adjacency = graph.adjacency if isinstance(graph, GraphSpec) else np.asarray(graph)
    if h.ndim != 3 or adjacency.shape != (h.shape[1], h.shape[1]):
        raise ShapeMismatch(f"gat_forward: input {h.shape} vs adjacency {adjacency.shape}")
    mask = adjacency > 0
    isolated = np.flatnonzero(~mask.any(axis=1))
    if isolated.size:
        raise IsolatedNode(f"nodes {isolated.tolist()} have no neighbours")
    wh = h @ params["gat.W"]
    s_src = wh @ params["gat.a_src"]  # (B, N, 1)
    s_dst = wh @ params["gat.a_dst"]
    scores = ad.leaky_relu(s_src + ad.transpose(s_dst), slope)  # (B, N, N)
    att = ad.softmax(scores, axis=-1, mask=mask)
    out = att @ wh
    return (out, att) if return_attention else out


def forward(x, graph: GraphSpec, params: dict[str, Value], cfg: ModelConfig) -> tuple[Value, Value]:
    """Return ``(features (B, N*d), prediction (B, 1))``."""
    enc = encode(x, params, cfg)
    h = gru_forward(enc, params, cfg)
    out = gat_forward(h, graph, params, cfg.leaky_slope)
    B = out.shape[0]
    z = ad.reshape(out, (B, cfg.feature_dim))
    pred = z @ params["reg.w"] + params["reg.b"]
    return z, pred


def save_checkpoint(path, params: dict[str, Value], cfg: ModelConfig) -> None:
    """Write all parameter matrices plus the model config to a ``.npz`` file."""
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    meta = np.array([f"{k}={v}" for k, v in asdict(cfg).items()])
    with open(path, "wb") as fh:
        np.savez(fh, __version__=np.array(CHECKPOINT_VERSION), __config__=meta, **arrays)


def load_checkpoint(path) -> tuple[dict[str, Value], ModelConfig]:
    with np.load(path, allow_pickle=False) as f:
        version = int(f["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        raw = dict(item.split("=", 1) for item in f["__config__"].tolist())
        params = {k[len("param/"):]: ad.parameter(f[k], name=k[len("param/"):]) for k in f.files if k.startswith("param/")}
    cfg = ModelConfig(
        n_nodes=int(raw["n_nodes"]),
        in_features=int(raw["in_features"]),
        window=int(raw["window"]),
        hidden=int(raw["hidden"]),
        gru_layers=int(raw["gru_layers"]),
        embed_dim=int(raw["embed_dim"]),
        leaky_slope=float(raw["leaky_slope"]),
    )
    return params, cfg
