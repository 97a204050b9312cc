"""Graph representation, dataset ingestion, splits and test-time perturbations.

All types are immutable after construction (arrays are frozen), so they can
be shared freely across threads.  Operations are pure given (inputs, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InsufficientShotsError, ParseError
from .rng import make_rng


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Graph:
    """One domain: undirected structure, raw node features, optional labels.

    Edges are stored once with src < dst; self-loops are rejected (they are
    added by adjacency normalization, not stored).
    """

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, canonical src < dst, unique
    features: np.ndarray  # (N, d_raw) float64
    labels: np.ndarray | None  # (N,) int64 in [0, num_classes)
    domain_id: str
    num_classes: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.num_nodes:
                raise DataError(
                    f"{self.domain_id or 'graph'}: edge endpoint out of range "
                    f"[0, {self.num_nodes}) (index error)"
                )
            if (edges[:, 0] == edges[:, 1]).any():
                raise DataError(f"{self.domain_id or 'graph'}: self-loops are not stored")
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise DataError(
                f"{self.domain_id or 'graph'}: features must be ({self.num_nodes}, d), "
                f"got {feats.shape}"
            )
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.num_nodes,):
                raise DataError(f"{self.domain_id or 'graph'}: labels must have one entry per node")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise DataError(
                    f"{self.domain_id or 'graph'}: label outside [0, {self.num_classes})"
                )
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", None if labels is None else _frozen(labels))

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class CsrAdjacency:
    """CSR storage for the normalized adjacency; column-sorted within rows."""

    row_ptr: np.ndarray  # (N+1,) int64
    col_idx: np.ndarray  # (nnz,) int64
    values: np.ndarray  # (nnz,) float64

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if (np.diff(row_ptr) < 0).any() or row_ptr[-1] != len(col_idx) or len(col_idx) != len(values):
            raise DataError("CSR: inconsistent row_ptr/col_idx/values")
        if not np.isfinite(values).all():
            raise DataError("CSR: non-finite value")
        n = len(row_ptr) - 1
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= n):
            raise DataError("CSR: column index out of range")
        if len(col_idx) > 1:
            row_start = np.zeros(len(col_idx), dtype=bool)
            row_start[row_ptr[1:-1]] = True
            within_row = ~row_start[1:]
            if (np.diff(col_idx)[within_row] <= 0).any():
                raise DataError("CSR: columns not strictly increasing within a row")
        object.__setattr__(self, "row_ptr", _frozen(row_ptr))
        object.__setattr__(self, "col_idx", _frozen(col_idx))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def num_nodes(self) -> int:
        return len(self.row_ptr) - 1


@dataclass(frozen=True)
class FewShotSplit:
    """m labelled node ids per class plus a 1:9 validation/test partition."""

    shots: dict[int, np.ndarray]
    val_ids: np.ndarray
    test_ids: np.ndarray
    m: int
    seed: int

    def __post_init__(self):
        object.__setattr__(
            self, "shots", {int(c): _frozen(np.asarray(v, dtype=np.int64)) for c, v in self.shots.items()}
        )
        object.__setattr__(self, "val_ids", _frozen(np.asarray(self.val_ids, dtype=np.int64)))
        object.__setattr__(self, "test_ids", _frozen(np.asarray(self.test_ids, dtype=np.int64)))

    def shot_ids(self) -> np.ndarray:
        """All shot node ids, ordered by class then draw order."""
        return np.concatenate([self.shots[c] for c in sorted(self.shots)])

    def shot_labels(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(self.shots[c]), c, dtype=np.int64) for c in sorted(self.shots)]
        )


# ---------------------------------------------------------------------------
# ingestion


def _open_data(path):
    try:
        return open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None


def _parse_int(token: str, path: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: expected integer, got {token!r}") from None


def load_edge_list(
    path,
    feature_path,
    label_path=None,
    num_classes: int | None = None,
    feature_header: bool = False,
    domain_id: str = "",
) -> Graph:
    """Load one domain from an edge list, a feature CSV and a label CSV.

    Edge file: one "src dst" pair per line, '#' comments allowed.  Feature
    file: CSV with one row per node (header skipped when ``feature_header``).
    Label file: CSV "node_id,class_index"; optional.  The node count is the
    number of feature rows; edges are deduplicated, input self-loops dropped.
    """
    path, feature_path = str(path), str(feature_path)
    features = _load_feature_csv(feature_path, feature_header)
    n = features.shape[0]

    pairs = []
    with _open_data(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'src dst', got {raw.rstrip()!r}")
            u = _parse_int(tokens[0], path, lineno)
            v = _parse_int(tokens[1], path, lineno)
            if u == v:
                continue
            if u < 0 or v < 0 or u >= n or v >= n:
                raise DataError(
                    f"{path}:{lineno}: edge ({u}, {v}) references a node outside "
                    f"[0, {n}) (index error)"
                )
            pairs.append((u, v))
    edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    labels = None
    if label_path is not None:
        labels = _load_label_csv(str(label_path), n)
        inferred = int(labels.max()) + 1 if labels.size else 0
        if num_classes is None:
            num_classes = inferred
        elif inferred > num_classes:
            raise DataError(
                f"{label_path}: found class {inferred - 1} but num_classes={num_classes}"
            )
    return Graph(
        num_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        domain_id=domain_id,
        num_classes=num_classes or 0,
    )


def _load_feature_csv(path: str, header: bool) -> np.ndarray:
    rows = []
    width = None
    with _open_data(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = raw.strip()
            if not line:
                continue
            tokens = line.split(",")
            try:
                row = [float(t) for t in tokens]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature value") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty feature file")
    return np.asarray(rows, dtype=np.float64)


def _load_label_csv(path: str, num_nodes: int) -> np.ndarray:
    labels = np.full(num_nodes, -1, dtype=np.int64)
    with _open_data(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split(",")
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'node_id,class_index'")
            node = _parse_int(tokens[0], path, lineno)
            cls = _parse_int(tokens[1], path, lineno)
            if node < 0 or node >= num_nodes:
                raise DataError(f"{path}:{lineno}: node id {node} outside [0, {num_nodes})")
            labels[node] = cls
    if (labels < 0).any():
        missing = int(np.flatnonzero(labels < 0)[0])
        raise DataError(f"{path}: node {missing} has no label")
    return labels


def load_manifest(path) -> list[Graph]:
    """Load every domain listed in a JSON manifest.

    The manifest is either {"domains": [...]} or a bare list; each entry has
    domain_id, edge_path, feature_path, label_path, num_classes and an
    optional feature_header flag.  Relative paths resolve against the
    manifest's directory.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    entries = payload["domains"] if isinstance(payload, dict) else payload
    if not entries:
        raise DataError(f"{path}: manifest lists no domains")
    base = path.parent
    graphs = []
    for entry in entries:
        try:
            graphs.append(
                load_edge_list(
                    base / entry["edge_path"],
                    base / entry["feature_path"],
                    base / entry["label_path"] if entry.get("label_path") else None,
                    num_classes=entry.get("num_classes"),
                    feature_header=bool(entry.get("feature_header", False)),
                    domain_id=entry["domain_id"],
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}: manifest entry missing field {exc}") from None
    ids = [g.domain_id for g in graphs]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate domain_id in manifest")
    return graphs


# ---------------------------------------------------------------------------
# operations


def normalize_adjacency(g: Graph) -> CsrAdjacency:
    """Symmetric GCN normalization with self-loops: D^-1/2 (A + I) D^-1/2.

    Each off-diagonal weight is computed once and mirrored, so the output is
    symmetric to the last bit.  Isolated nodes get a unit self-loop entry.
    """
    n = g.num_nodes
    src, dst = g.edges[:, 0], g.edges[:, 1]
    deg = np.zeros(n, dtype=np.float64)
    np.add.at(deg, src, 1.0)
    np.add.at(deg, dst, 1.0)
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)

    w = inv_sqrt[src] * inv_sqrt[dst]
    diag = np.arange(n, dtype=np.int64)
    rows = np.concatenate([src, dst, diag])
    cols = np.concatenate([dst, src, diag])
    vals = np.concatenate([w, w, inv_sqrt * inv_sqrt])

    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return CsrAdjacency(row_ptr=row_ptr, col_idx=cols, values=vals)


def sample_few_shot_split(g: Graph, m: int, seed: int) -> FewShotSplit:
    """Draw m shots per class uniformly, then partition the rest 1:9 val:test.

    |val| = floor((N - m*C) / 10); deterministic for a fixed seed.
    """
    if m < 1:
        raise ConfigError(f"shot count m={m}: must be >= 1")
    if g.labels is None or g.num_classes < 1:
        raise DataError(f"{g.domain_id or 'graph'}: split sampling needs labels")
    rng = make_rng(seed, "split", g.domain_id)
    shots: dict[int, np.ndarray] = {}
    taken = np.zeros(g.num_nodes, dtype=bool)
    for c in range(g.num_classes):
        ids = np.flatnonzero(g.labels == c)
        if len(ids) < m:
            raise InsufficientShotsError(
                f"{g.domain_id or 'graph'}: class {c} has {len(ids)} labelled nodes, needs {m}"
            )
        pick = rng.choice(ids, size=m, replace=False)
        shots[c] = pick
        taken[pick] = True
    rest = rng.permutation(np.flatnonzero(~taken))
    n_val = len(rest) // 10
    return FewShotSplit(shots=shots, val_ids=rest[:n_val], test_ids=rest[n_val:], m=m, seed=seed)


def _check_ratio(ratio: float):
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"ratio={ratio}: must be in [0, 1]")


def perturb_features(g: Graph, test_ids, ratio: float, seed: int) -> Graph:
    """Permute the feature rows of ceil(ratio * |test_ids|) test nodes among themselves."""
    _check_ratio(ratio)
    test_ids = np.asarray(test_ids, dtype=np.int64)
    k = math.ceil(ratio * len(test_ids))
    feats = g.features.copy()
    if k > 0:
        rng = make_rng(seed, "perturb-features", g.domain_id)
        chosen = rng.choice(test_ids, size=k, replace=False)
        perm = rng.permutation(k)
        feats[chosen] = g.features[chosen][perm]
    return Graph(
        num_nodes=g.num_nodes,
        edges=g.edges,
        features=feats,
        labels=g.labels,
        domain_id=g.domain_id,
        num_classes=g.num_classes,
    )


def perturb_edges(g: Graph, test_ids, ratio: float, seed: int) -> Graph:
    """Drop each edge incident to a test node independently with probability ratio."""
    _check_ratio(ratio)
    test_ids = np.asarray(test_ids, dtype=np.int64)
    is_test = np.zeros(g.num_nodes, dtype=bool)
    is_test[test_ids] = True
    incident = is_test[g.edges[:, 0]] | is_test[g.edges[:, 1]]
    rng = make_rng(seed, "perturb-edges", g.domain_id)
    drop = incident & (rng.random(g.num_edges) < ratio)
    return Graph(
        num_nodes=g.num_nodes,
        edges=g.edges[~drop],
        features=g.features,
        labels=g.labels,
        domain_id=g.domain_id,
        num_classes=g.num_classes,
    )


def merge_classes(g: Graph, group_a, seed: int = 0) -> Graph:
    """Relabel to two classes: 0 for group_a, 1 for the rest.

    Structure and features are carried over bit-exactly.  ``seed`` is accepted
    for call-site symmetry with the perturbation ops; merging itself is
    deterministic.
    """
    del seed
    if g.labels is None:
        raise DataError(f"{g.domain_id or 'graph'}: merge_classes needs labels")
    group = sorted({int(c) for c in group_a})
    if not group:
        raise ConfigError("invalid grouping: group_a is empty")
    if any(c < 0 or c >= g.num_classes for c in group):
        raise ConfigError(f"invalid grouping: class outside [0, {g.num_classes})")
    if len(group) >= g.num_classes:
        raise ConfigError("invalid grouping: group_a must be a proper subset of the classes")
    labels = np.where(np.isin(g.labels, group), 0, 1).astype(np.int64)
    return Graph(
        num_nodes=g.num_nodes,
        edges=g.edges,
        features=g.features,
        labels=labels,
        domain_id=g.domain_id,
        num_classes=2,
    )
