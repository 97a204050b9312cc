"""Centroid/layer prompts, complementary labels, the TGCL objective and tuning.

The encoder stays frozen; only the centroid offsets (beta) and per-layer
ensemble weights (eta) are learnable.  All gradients are analytic and every
argmin/argmax tie resolves to the lowest index.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field
from typing import Literal

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    UnsupportedVersionError,
)
from .graph import FewShotSplit
from .linalg import COSINE_EPS, cosine_sim, row_softmax
from .pretrain import EmbeddingStack
from .rng import make_rng

LOG_CLAMP = 1e-12

_PROMPT_MAGIC = b"GFMP"
_PROMPT_VERSION = 1


class TuneConfig(BaseModel):
    """Knobs for test-time prompt tuning (full-batch gradient descent)."""

    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    tau: float = Field(default=0.5, gt=0.0)
    lr: float = Field(default=0.01, ge=0.0)
    max_epochs: int = Field(default=500, ge=1)
    patience: int = Field(default=50, ge=1)
    seed: int = 0
    layer_mode: Literal["learned", "frozen-uniform"] = "learned"
    tgcl_mode: Literal["complementary", "few-shot-only", "pseudo"] = "complementary"


@dataclass(frozen=True)
class CentroidMatrix:
    """Class centroids per layer: (L+1, C, d)."""

    e: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.e, dtype=np.float64))
        if a.ndim != 3:
            raise ShapeError(f"centroids must be (L+1, C, d), got {a.shape}")
        if not np.isfinite(a).all():
            raise NumericError("non-finite centroid")
        a.setflags(write=False)
        object.__setattr__(self, "e", a)


@dataclass(frozen=True)
class Prompts:
    """Learnable centroid offsets beta (L+1, C, d) and layer weights eta (L+1,)."""

    beta: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.beta, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.eta, dtype=np.float64))
        if b.ndim != 3 or t.ndim != 1 or t.shape[0] != b.shape[0]:
            raise ShapeError(f"prompt shapes mismatch: beta {b.shape}, eta {t.shape}")
        if not (np.isfinite(b).all() and np.isfinite(t).all()):
            raise NumericError("non-finite prompt")
        b.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "eta", t)

    @property
    def param_count(self) -> int:
        return self.beta.size + self.eta.size


@dataclass(frozen=True)
class ComplementaryLabels:
    """Pivot layer, per-test-node least-similar class, and per-layer mean entropy."""

    pivot_layer: int
    labels: np.ndarray
    per_layer_entropy: np.ndarray
    node_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "per_layer_entropy", np.asarray(self.per_layer_entropy, dtype=np.float64))
        object.__setattr__(self, "node_ids", np.asarray(self.node_ids, dtype=np.int64))
        if self.pivot_layer != int(np.argmin(self.per_layer_entropy)):
            raise DataError("pivot_layer must be the argmin of per_layer_entropy")


@dataclass(frozen=True)
class PseudoLabels:
    """Most-similar class at the last layer, used as positive targets (control arm)."""

    node_ids: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class TuneHistoryRow:
    epoch: int
    loss_te: float
    loss_fs: float
    loss_tgcl: float
    val_acc: float


# ---------------------------------------------------------------------------
# centroids and predictions


def init_centroids(stack: EmbeddingStack, split: FewShotSplit) -> CentroidMatrix:
    """Per layer and class, the mean embedding of that class's shots."""
    num_classes = len(split.shots)
    e = np.zeros((stack.depth, num_classes, stack.dim))
    for c in range(num_classes):
        if c not in split.shots or len(split.shots[c]) == 0:
            raise DataError(f"init_centroids: class {c} has no shots")
        ids = split.shots[c]
        for l, h in enumerate(stack.layers):
            e[l, c] = h[ids].mean(axis=0)
    return CentroidMatrix(e)


def refine_centroids(e: CentroidMatrix, prompts: Prompts) -> CentroidMatrix:
    """Elementwise e + beta."""
    if e.e.shape != prompts.beta.shape:
        raise ShapeError(f"centroids {e.e.shape} vs beta {prompts.beta.shape}")
    return CentroidMatrix(e.e + prompts.beta)


def _unit_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows scaled to unit norm; rows with norm < eps become zero (guard)."""
    norms = np.sqrt((mat * mat).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = mat / safe[:, None]
    unit[norms < COSINE_EPS] = 0.0
    return unit, norms


def _stack_units(stack: EmbeddingStack) -> list[np.ndarray]:
    return [_unit_rows(h)[0] for h in stack.layers]


def layer_scores(stack: EmbeddingStack, e_tilde: CentroidMatrix, node: int) -> np.ndarray:
    """(L+1) x C cosine similarities of one node against every refined centroid."""
    if not 0 <= node < stack.num_nodes:
        raise ShapeError(f"node {node} outside [0, {stack.num_nodes})")
    depth, num_classes = e_tilde.e.shape[0], e_tilde.e.shape[1]
    out = np.zeros((depth, num_classes))
    for l in range(depth):
        h = stack.layers[l][node]
        for c in range(num_classes):
            out[l, c] = cosine_sim(h, e_tilde.e[l, c])
    return out


def _ensemble_scores(stack_units: list[np.ndarray], e_tilde: CentroidMatrix, eta, nodes) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    scores = None
    for l, ul in enumerate(stack_units):
        v, _ = _unit_rows(e_tilde.e[l])
        s = eta[l] * (ul[nodes] @ v.T)
        scores = s if scores is None else scores + s
    return scores


def ensemble_predict(stack: EmbeddingStack, e_tilde: CentroidMatrix, eta, nodes) -> np.ndarray:
    """argmax_c of the eta-weighted per-layer similarity sum, ties to lowest class.

    The softmax over the summed scores is monotone, so it cannot change the
    argmax; this is asserted on every call.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    scores = _ensemble_scores(_stack_units(stack), e_tilde, eta, nodes)
    pred = np.argmax(scores, axis=1)
    soft_pred = np.argmax(row_softmax(scores, 1.0), axis=1)
    assert (pred == soft_pred).all(), "softmax changed an ensemble argmax"
    return pred


# ---------------------------------------------------------------------------
# complementary labels


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def compute_complementary_labels(stack: EmbeddingStack, e: CentroidMatrix, test_ids) -> ComplementaryLabels:
    """Entropy-selected pivot layer and least-similar class per test node.

    Per layer, class probabilities are the plain softmax of the cosine
    similarities against the unrefined centroids (temperature 1, no layer
    weights); the pivot is the layer with the lowest mean entropy, and the
    complementary label is the argmin similarity at the pivot.  Computed once,
    before any tuning.
    """
    test_ids = np.asarray(test_ids, dtype=np.int64)
    if len(test_ids) == 0:
        raise DataError("compute_complementary_labels: empty test set")
    units = _stack_units(stack)
    mean_entropy = np.zeros(stack.depth)
    sims_per_layer = []
    for l, ul in enumerate(units):
        v, _ = _unit_rows(e.e[l])
        s = ul[test_ids] @ v.T
        sims_per_layer.append(s)
        mean_entropy[l] = float(_entropy_rows(row_softmax(s, 1.0)).mean())
    pivot = int(np.argmin(mean_entropy))
    labels = np.argmin(sims_per_layer[pivot], axis=1)
    return ComplementaryLabels(
        pivot_layer=pivot, labels=labels, per_layer_entropy=mean_entropy, node_ids=test_ids
    )


def compute_pseudo_labels(stack: EmbeddingStack, e: CentroidMatrix, test_ids) -> PseudoLabels:
    """Most-similar class at the last layer (the degradation-study arm)."""
    test_ids = np.asarray(test_ids, dtype=np.int64)
    if len(test_ids) == 0:
        raise DataError("compute_pseudo_labels: empty test set")
    ul, _ = _unit_rows(stack.layers[-1])
    v, _ = _unit_rows(e.e[-1])
    labels = np.argmax(ul[test_ids] @ v.T, axis=1)
    return PseudoLabels(node_ids=test_ids, labels=labels)


def last_layer_argmin_labels(stack: EmbeddingStack, e: CentroidMatrix, test_ids) -> np.ndarray:
    """Least-similar class at the last layer (baseline for the label audit)."""
    test_ids = np.asarray(test_ids, dtype=np.int64)
    ul, _ = _unit_rows(stack.layers[-1])
    v, _ = _unit_rows(e.e[-1])
    return np.argmin(ul[test_ids] @ v.T, axis=1)


# ---------------------------------------------------------------------------
# the TGCL objective


def _term_loss_grad(ul_ids, v, eta_l, tau, y, kind, want_grad):
    """One (layer, node set) loss term and its dL/dz, mean-weighted over nodes.

    kind "ce": -log p_y (few-shot and pseudo arms); kind "comp":
    -log(1 - p_ybar).  The log argument is clamped below at 1e-12 and the
    gradient through a clamped term is zero.
    """
    s = ul_ids @ v.T
    p = row_softmax(eta_l * s, tau)
    n = len(y)
    ar = np.arange(n)
    if kind == "ce":
        py = p[ar, y]
        loss = float(-np.log(np.maximum(py, LOG_CLAMP)).mean())
        if not want_grad:
            return loss, s, None
        g = p.copy()
        g[ar, y] -= 1.0
        g[py <= LOG_CLAMP] = 0.0
        g /= n
    else:
        pb = p[ar, y]
        denom = 1.0 - pb
        loss = float(-np.log(np.maximum(denom, LOG_CLAMP)).mean())
        if not want_grad:
            return loss, s, None
        coef = np.where(denom > LOG_CLAMP, pb / np.where(denom > 0, denom, 1.0), 0.0)
        g = -p * coef[:, None]
        g[ar, y] += coef
        g /= n
    return loss, s, g


def _tgcl_eval(
    stack_units,
    e3d,
    beta,
    eta,
    tau,
    gamma,
    fs_ids,
    fs_labels,
    te_ids,
    te_labels,
    te_kind,
    want_grads,
):
    """Losses (and optionally gradients) of the TGCL objective.

    Returns (loss_te, loss_fs, grad_beta, grad_eta).  The cosine adjoint
    w.r.t. a refined centroid e is (u - s v) / ||e|| with u, v the unit
    embedding/centroid; guard branches contribute zero gradient.
    """
    depth = len(stack_units)
    loss_te = 0.0
    loss_fs = 0.0
    gb = np.zeros_like(beta) if want_grads else None
    ge = np.zeros(depth) if want_grads else None
    for l in range(depth):
        v, norms = _unit_rows(e3d[l] + beta[l])
        inv_ne = np.where(norms >= COSINE_EPS, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
        parts = [(fs_ids, fs_labels, "ce", 1.0 - gamma, "fs")]
        if te_ids is not None and len(te_ids) > 0:
            parts.append((te_ids, te_labels, te_kind, gamma, "te"))
        for ids, y, kind, weight, which in parts:
            ul = stack_units[l][ids]
            loss, s, g = _term_loss_grad(ul, v, eta[l], tau, y, kind, want_grads)
            if which == "fs":
                loss_fs += loss
            else:
                loss_te += loss
            if not want_grads:
                continue
            w1 = g.T @ ul
            w2 = (g * s).sum(axis=0)
            gb[l] += weight * (eta[l] / tau) * inv_ne[:, None] * (w1 - w2[:, None] * v)
            ge[l] += weight * (g * s).sum() / tau
    return loss_te, loss_fs, gb, ge


def loss_te(stack: EmbeddingStack, e_tilde: CentroidMatrix, eta, comp, tau: float) -> float:
    """Test-time complementary loss: -sum_l mean_i log(1 - p_ybar)."""
    if tau <= 0:
        raise ConfigError(f"invalid temperature tau={tau}")
    units = _stack_units(stack)
    eta = np.asarray(eta, dtype=np.float64)
    total = 0.0
    for l in range(stack.depth):
        v, _ = _unit_rows(e_tilde.e[l])
        loss, _, _ = _term_loss_grad(units[l][comp.node_ids], v, eta[l], tau, comp.labels, "comp", False)
        total += loss
    return total


def loss_fs(stack: EmbeddingStack, e_tilde: CentroidMatrix, eta, split: FewShotSplit, tau: float) -> float:
    """Few-shot cross-entropy: -sum_l mean_i log p_y."""
    if tau <= 0:
        raise ConfigError(f"invalid temperature tau={tau}")
    units = _stack_units(stack)
    eta = np.asarray(eta, dtype=np.float64)
    ids, y = split.shot_ids(), split.shot_labels()
    total = 0.0
    for l in range(stack.depth):
        v, _ = _unit_rows(e_tilde.e[l])
        loss, _, _ = _term_loss_grad(units[l][ids], v, eta[l], tau, y, "ce", False)
        total += loss
    return total


def _mode_inputs(split: FewShotSplit, comp, cfg: TuneConfig):
    fs_ids, fs_labels = split.shot_ids(), split.shot_labels()
    if cfg.tgcl_mode == "few-shot-only":
        return fs_ids, fs_labels, None, None, "comp", 0.0
    if comp is None:
        raise ConfigError(f"tgcl_mode={cfg.tgcl_mode!r} requires test-node labels")
    kind = "comp" if cfg.tgcl_mode == "complementary" else "ce"
    return fs_ids, fs_labels, comp.node_ids, comp.labels, kind, cfg.gamma


def tgcl_loss(stack: EmbeddingStack, e: CentroidMatrix, prompts: Prompts, split: FewShotSplit, comp, cfg: TuneConfig) -> float:
    """gamma * L_te + (1 - gamma) * L_fs on the refined centroids."""
    fs_ids, fs_labels, te_ids, te_labels, kind, gamma = _mode_inputs(split, comp, cfg)
    lte, lfs, _, _ = _tgcl_eval(
        _stack_units(stack), e.e, prompts.beta, prompts.eta, cfg.tau, gamma,
        fs_ids, fs_labels, te_ids, te_labels, kind, False,
    )
    return gamma * lte + (1.0 - gamma) * lfs


def tgcl_gradients(stack: EmbeddingStack, e: CentroidMatrix, prompts: Prompts, split: FewShotSplit, comp, cfg: TuneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (grad_beta, grad_eta) of the TGCL objective."""
    fs_ids, fs_labels, te_ids, te_labels, kind, gamma = _mode_inputs(split, comp, cfg)
    _, _, gb, ge = _tgcl_eval(
        _stack_units(stack), e.e, prompts.beta, prompts.eta, cfg.tau, gamma,
        fs_ids, fs_labels, te_ids, te_labels, kind, True,
    )
    return gb, ge


# ---------------------------------------------------------------------------
# the tuning loop


def _accuracy(stack_units, e3d, beta, eta, nodes, labels) -> float:
    scores = None
    for l, ul in enumerate(stack_units):
        v, _ = _unit_rows(e3d[l] + beta[l])
        s = eta[l] * (ul[nodes] @ v.T)
        scores = s if scores is None else scores + s
    pred = np.argmax(scores, axis=1)
    return float((pred == labels[nodes]).mean())


def tune(
    stack: EmbeddingStack,
    split: FewShotSplit,
    labels: np.ndarray,
    cfg: TuneConfig,
    tgcl_test_ids=None,
) -> tuple[Prompts, list[TuneHistoryRow]]:
    """Full-batch gradient descent on (beta, eta); returns best-val prompts.

    beta starts at N(0, 0.01^2), eta at all ones (or frozen at 1/(L+1) when
    layer_mode is "frozen-uniform", in which case eta receives no updates).
    Complementary (or pseudo) labels are computed once from the initial
    centroids before the loop.  ``labels`` supplies ground truth for the
    validation accuracy; ``tgcl_test_ids`` restricts which test nodes enter
    the test-time loss (default: the full test split).  Stops after
    ``max_epochs`` or ``patience`` epochs without validation improvement and
    restores the best-validation prompts.
    """
    depth, dim = stack.depth, stack.dim
    num_classes = len(split.shots)
    labels = np.asarray(labels, dtype=np.int64)
    rng = make_rng(cfg.seed, "tune-init")
    beta = 0.01 * rng.standard_normal((depth, num_classes, dim))
    if cfg.layer_mode == "frozen-uniform":
        eta = np.full(depth, 1.0 / depth)
    else:
        eta = np.ones(depth)

    e = init_centroids(stack, split)
    te_ids = split.test_ids if tgcl_test_ids is None else np.asarray(tgcl_test_ids, dtype=np.int64)
    if cfg.tgcl_mode == "complementary":
        comp = compute_complementary_labels(stack, e, te_ids)
    elif cfg.tgcl_mode == "pseudo":
        comp = compute_pseudo_labels(stack, e, te_ids)
    else:
        comp = None
    fs_ids, fs_labels, te_ids, te_labels, kind, gamma = _mode_inputs(split, comp, cfg)

    units = _stack_units(stack)
    has_val = len(split.val_ids) > 0

    def val_accuracy(b, t):
        return _accuracy(units, e.e, b, t, split.val_ids, labels) if has_val else float("nan")

    best_beta, best_eta = beta.copy(), eta.copy()
    best_acc = val_accuracy(beta, eta)
    history: list[TuneHistoryRow] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        lte, lfs, gb, ge = _tgcl_eval(
            units, e.e, beta, eta, cfg.tau, gamma,
            fs_ids, fs_labels, te_ids, te_labels, kind, True,
        )
        ltg = gamma * lte + (1.0 - gamma) * lfs
        if not np.isfinite(ltg):
            raise NumericError(f"tune: non-finite loss at epoch {epoch}")
        beta = beta - cfg.lr * gb
        if cfg.layer_mode == "learned":
            eta = eta - cfg.lr * ge
        val_acc = val_accuracy(beta, eta)
        history.append(TuneHistoryRow(epoch, lte, lfs, ltg, val_acc))
        improved = (val_acc > best_acc) if has_val else True
        if improved:
            best_beta, best_eta, best_acc = beta.copy(), eta.copy(), val_acc
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return Prompts(beta=best_beta, eta=best_eta), history


def subgraph_embed(stack: EmbeddingStack, node_sets: list) -> EmbeddingStack:
    """Mean-pool each node set per layer; one output row per subgraph."""
    if not node_sets:
        raise DataError("subgraph_embed: no node sets")
    sets = []
    for i, ids in enumerate(node_sets):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            raise DataError(f"subgraph_embed: node set {i} is empty")
        sets.append(ids)
    layers = tuple(
        np.stack([h[ids].mean(axis=0) for ids in sets]) for h in stack.layers
    )
    return EmbeddingStack(layers)


# ---------------------------------------------------------------------------
# persistence (same envelope as the encoder checkpoints)


def save_prompts(prompts: Prompts, path) -> None:
    depth, num_classes, dim = prompts.beta.shape
    header = struct.pack("<4sIIII", _PROMPT_MAGIC, _PROMPT_VERSION, depth, num_classes, dim)
    payload = np.ascontiguousarray(prompts.beta, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(prompts.eta, dtype="<f8").tobytes()
    body = header + payload
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_prompts(path) -> Prompts:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"prompt checkpoint not found: {path}") from None
    if len(blob) < 24:
        raise CheckpointError(f"{path}: truncated prompt checkpoint")
    magic, version, depth, num_classes, dim = struct.unpack("<4sIIII", blob[:20])
    if magic != _PROMPT_MAGIC:
        raise CheckpointError(f"{path}: not a prompt checkpoint (bad magic)")
    if version != _PROMPT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported prompt checkpoint version {version}")
    nb = depth * num_classes * dim
    expected = 20 + (nb + depth) * 8 + 4
    if len(blob) != expected:
        raise CheckpointError(f"{path}: corrupt prompt checkpoint (size {len(blob)}, want {expected})")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError(f"{path}: corrupt prompt checkpoint (checksum mismatch)")
    flat = np.frombuffer(blob[20:-4], dtype="<f8")
    beta = flat[:nb].reshape(depth, num_classes, dim).copy()
    eta = flat[nb:].copy()
    return Prompts(beta=beta, eta=eta)
