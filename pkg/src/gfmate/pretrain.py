"""Feature alignment, GCN encoder, link-prediction pre-training, persistence.

The encoder is an L-layer GCN without biases: H(0) is the SVD-aligned input,
H(l) = relu(A_hat H(l-1) W(l)) for hidden layers and the final layer is
linear.  Pre-training minimizes binary cross-entropy on edge/non-edge dot
products with hand-derived backpropagation and plain SGD, cycling through the
source graphs round-robin, one step per epoch.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from .errors import (
    CheckpointError,
    DataError,
    NumericError,
    ShapeError,
    UnsupportedVersionError,
)
from .graph import CsrAdjacency, Graph, normalize_adjacency
from .linalg import spmm, truncated_svd
from .rng import make_rng

_CKPT_MAGIC = b"GFMC"
_CKPT_VERSION = 1


class PretrainConfig(BaseModel):
    """Knobs for link-prediction pre-training of the shared encoder.

    One epoch is one SGD step on one source graph (round-robin).  lr=0 is
    allowed and leaves the initialization untouched (useful as a control).
    """

    epochs: int = Field(default=200, ge=1)
    lr: float = Field(default=0.01, ge=0.0)
    neg_ratio: float = Field(default=1.0, gt=0.0)
    batch_edges: int = Field(default=256, ge=1)
    seed: int = 0
    hidden_dim: int = Field(default=256, ge=1)
    num_layers: int = Field(default=2, ge=1)
    row_normalize: bool = True


@dataclass(frozen=True)
class GcnParams:
    """Frozen encoder parameters: L square weight matrices of size d x d."""

    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = []
        for w in self.weights:
            a = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ShapeError(f"weight must be square, got {a.shape}")
            if not np.isfinite(a).all():
                raise NumericError("non-finite encoder weight")
            a.setflags(write=False)
            ws.append(a)
        if len({w.shape[0] for w in ws}) > 1:
            raise ShapeError("all weight matrices must share one hidden dimension")
        object.__setattr__(self, "weights", tuple(ws))

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class PretrainResult:
    """Trained parameters plus the per-step loss trace and step accounting."""

    params: GcnParams
    loss_trace: tuple[float, ...]
    steps_per_domain: dict[str, int]

    @property
    def num_steps(self) -> int:
        return len(self.loss_trace)


@dataclass(frozen=True)
class EmbeddingStack:
    """Per-layer node embeddings H(0..L); layer 0 is the aligned input."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        ls = []
        shape = None
        for h in self.layers:
            a = np.ascontiguousarray(np.asarray(h, dtype=np.float64))
            if shape is None:
                shape = a.shape
            elif a.shape != shape:
                raise ShapeError("all stack layers must share one shape")
            a.setflags(write=False)
            ls.append(a)
        if not ls:
            raise ShapeError("empty embedding stack")
        object.__setattr__(self, "layers", tuple(ls))

    @property
    def depth(self) -> int:
        """Number of stored layers, i.e. L + 1."""
        return len(self.layers)

    @property
    def num_nodes(self) -> int:
        return self.layers[0].shape[0]

    @property
    def dim(self) -> int:
        return self.layers[0].shape[1]


def svd_align(graphs: list[Graph], d: int, seed: int, row_normalize: bool = True) -> list[Graph]:
    """Project every domain's features to a common width d via truncated SVD.

    Each domain is factored independently and replaced by U_k S_k with
    k = min(d, N, d_raw); missing columns are zero-padded.  Rows are then
    L2-normalized (zero rows excluded) unless ``row_normalize`` is off.
    """
    if d < 1:
        raise ShapeError(f"target dimension d={d}: must be >= 1")
    if not graphs:
        raise DataError("svd_align: empty graph list")
    out = []
    for g in graphs:
        k = min(d, g.num_nodes, g.feature_dim)
        dom_seed = int(make_rng(seed, "svd-align", g.domain_id).integers(2**31))
        u, s, _ = truncated_svd(g.features, k, dom_seed)
        proj = u * s
        if k < d:
            proj = np.hstack([proj, np.zeros((g.num_nodes, d - k))])
        if row_normalize:
            norms = np.sqrt((proj * proj).sum(axis=1, keepdims=True))
            proj = np.where(norms > 1e-12, proj / np.where(norms > 0, norms, 1.0), proj)
        out.append(
            Graph(
                num_nodes=g.num_nodes,
                edges=g.edges,
                features=proj,
                labels=g.labels,
                domain_id=g.domain_id,
                num_classes=g.num_classes,
            )
        )
    return out


def init_params(d: int, num_layers: int, seed: int) -> GcnParams:
    """Xavier-uniform weights, no biases."""
    rng = make_rng(seed, "xavier")
    limit = np.sqrt(3.0 / d)
    return GcnParams(tuple(rng.uniform(-limit, limit, (d, d)) for _ in range(num_layers)))


def _forward_cached(params: GcnParams, adj: CsrAdjacency, x: np.ndarray):
    hs = [x]
    msgs = []
    pres = []
    last = params.num_layers - 1
    for l, w in enumerate(params.weights):
        m = spmm(adj, hs[-1])
        z = m @ w
        msgs.append(m)
        pres.append(z)
        hs.append(z if l == last else np.maximum(z, 0.0))
    return hs, msgs, pres


def gcn_forward(params: GcnParams, adj: CsrAdjacency, x) -> EmbeddingStack:
    """Run the frozen encoder; returns H(0..L) with a linear final layer."""
    xm = np.asarray(x, dtype=np.float64)
    if xm.ndim != 2 or xm.shape[1] != params.d:
        raise ShapeError(f"input must be (N, {params.d}), got {xm.shape}")
    if adj.num_nodes != xm.shape[0]:
        raise ShapeError(f"adjacency has {adj.num_nodes} nodes, features {xm.shape[0]}")
    hs, _, _ = _forward_cached(params, adj, xm)
    return EmbeddingStack(tuple(hs))


def encode_graph(params: GcnParams, g: Graph) -> EmbeddingStack:
    """normalize_adjacency + gcn_forward in one call."""
    return gcn_forward(params, normalize_adjacency(g), g.features)


def _backward(params: GcnParams, adj: CsrAdjacency, msgs, pres, grad_h_last):
    grads = [None] * params.num_layers
    g = grad_h_last
    for l in range(params.num_layers - 1, -1, -1):
        gz = g if l == params.num_layers - 1 else g * (pres[l] > 0)
        grads[l] = msgs[l].T @ gz
        if l > 0:
            # A_hat is symmetric, so the adjoint of spmm is spmm again.
            g = spmm(adj, gz @ params.weights[l].T)
    return grads


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def link_pred_loss(h, pos_edges, neg_edges) -> tuple[float, np.ndarray]:
    """Mean BCE of sigmoid(h_u . h_v) against edge labels, plus dL/dh.

    pos_edges and neg_edges are (n, 2) index arrays; the gradient is the
    exact analytic one, accumulated per endpoint.
    """
    hm = np.asarray(h, dtype=np.float64)
    pos = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(neg_edges, dtype=np.int64).reshape(-1, 2)
    total = len(pos) + len(neg)
    if total == 0:
        raise DataError("link_pred_loss: empty sample set")
    pairs = np.vstack([pos, neg])
    if pairs.size and (pairs.min() < 0 or pairs.max() >= hm.shape[0]):
        raise DataError("link_pred_loss: edge endpoint out of range")
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    u, v = pairs[:, 0], pairs[:, 1]
    scores = (hm[u] * hm[v]).sum(axis=1)
    # BCE(sigmoid(s), y) = softplus(s) - y*s, stable via logaddexp
    loss = float((np.logaddexp(0.0, scores) - y * scores).mean())
    coeff = (_sigmoid(scores) - y) / total
    grad = np.zeros_like(hm)
    np.add.at(grad, u, coeff[:, None] * hm[v])
    np.add.at(grad, v, coeff[:, None] * hm[u])
    return loss, grad


def _sample_negatives(rng, num_nodes: int, edge_keys: set, count: int) -> np.ndarray:
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    for _ in range(200):
        need = count - filled
        if need == 0:
            break
        cand = rng.integers(0, num_nodes, size=(2 * need + 8, 2))
        for u, v in cand:
            if u == v:
                continue
            a, b = (u, v) if u < v else (v, u)
            if int(a) * num_nodes + int(b) in edge_keys:
                continue
            out[filled] = (u, v)
            filled += 1
            if filled == count:
                break
    if filled < count:
        raise DataError("negative sampling failed: graph too dense for rejection sampling")
    return out


def pretrain(graphs: list[Graph], cfg: PretrainConfig) -> PretrainResult:
    """Train the encoder on the source graphs.

    Each epoch takes one SGD step on the next source graph in round-robin
    order: sample batch_edges positives (uniform, with replacement) plus
    round(neg_ratio * batch_edges) negatives from non-edges by rejection,
    backpropagate the link-prediction loss by hand, update with lr.  The
    per-step loss trace is returned alongside the parameters.
    """
    if not graphs:
        raise DataError("pretrain: empty graph list")
    d = graphs[0].feature_dim
    for g in graphs:
        if g.feature_dim != d:
            raise ShapeError("pretrain: graphs are not aligned to one feature width")

    active = []
    for g in graphs:
        if g.num_edges == 0:
            warnings.warn(f"pretrain: skipping edgeless source graph {g.domain_id!r}")
            continue
        keys = {int(a) * g.num_nodes + int(b) for a, b in g.edges}
        active.append((g, normalize_adjacency(g), keys))
    if not active:
        raise DataError("pretrain: every source graph is edgeless, no training signal")

    params = init_params(d, cfg.num_layers, cfg.seed)
    weights = [w.copy() for w in params.weights]
    rng = make_rng(cfg.seed, "pretrain-sampling")
    n_neg = max(1, round(cfg.neg_ratio * cfg.batch_edges))
    trace: list[float] = []
    steps = {g.domain_id: 0 for g, _, _ in active}

    for step in range(cfg.epochs):
        g, adj, keys = active[step % len(active)]
        current = GcnParams(tuple(weights))
        pos = g.edges[rng.integers(0, g.num_edges, size=cfg.batch_edges)]
        neg = _sample_negatives(rng, g.num_nodes, keys, n_neg)
        hs, msgs, pres = _forward_cached(current, adj, g.features)
        loss, grad_h = link_pred_loss(hs[-1], pos, neg)
        if not np.isfinite(loss):
            raise NumericError(f"pretrain: non-finite loss at epoch {step}")
        grads = _backward(current, adj, msgs, pres, grad_h)
        if cfg.lr != 0.0:
            weights = [w - cfg.lr * gw for w, gw in zip(weights, grads)]
        trace.append(loss)
        steps[g.domain_id] += 1
    return PretrainResult(
        params=GcnParams(tuple(weights)), loss_trace=tuple(trace), steps_per_domain=steps
    )


# ---------------------------------------------------------------------------
# persistence: magic, version, L, d, row-major f64 payload, trailing CRC32


def save_params(params: GcnParams, path) -> None:
    header = struct.pack("<4sIII", _CKPT_MAGIC, _CKPT_VERSION, params.num_layers, params.d)
    payload = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in params.weights)
    body = header + payload
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_params(path) -> GcnParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if len(blob) < 20:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, num_layers, d = struct.unpack("<4sIII", blob[:16])
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not an encoder checkpoint (bad magic)")
    if version != _CKPT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    expected = 16 + num_layers * d * d * 8 + 4
    if len(blob) != expected:
        raise CheckpointError(f"{path}: corrupt checkpoint (size {len(blob)}, want {expected})")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError(f"{path}: corrupt checkpoint (checksum mismatch)")
    flat = np.frombuffer(blob[16:-4], dtype="<f8")
    weights = tuple(flat[i * d * d : (i + 1) * d * d].reshape(d, d).copy() for i in range(num_layers))
    return GcnParams(weights)
