"""Node score prediction.

Three modes:

* ``direct``: one free score per node (no network).
* ``sage``: two mean-aggregation graph conv layers and a linear head.
* ``multigrid``: a V-cycle of graph convs over heavy-edge-matching
  coarsenings, then the linear head.

Input features are ``[fiedler_value, degree / max_degree]`` per node, computed
exactly instead of by a pretrained embedding network.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .orderings import fiedler_vector
from .sparse import GraphView

CHECKPOINT_VERSION = 1
MODES = ("direct", "sage", "multigrid")


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "multigrid"
    hidden_dim: int = 16
    num_conv_layers: int = 2
    head_layers: int = 4
    in_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown encoder mode {self.mode!r}; expected one of {MODES}")
        if self.hidden_dim < 1 or self.in_dim < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.num_conv_layers < 1 or self.head_layers < 1:
            raise ValueError("layer counts must be >= 1")


def init_features(n: int, seed: int) -> np.ndarray:
    """i.i.d. standard normal node features, shape ``(n, 1)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).standard_normal((n, 1))


def spectral_features(G: GraphView) -> np.ndarray:
    """``[fiedler, normalized degree]`` for every node, shape ``(n, 2)``."""
    fied = fiedler_vector(G)
    deg = G.degree.astype(float)
    top = deg.max() if G.n else 0.0
    ndeg = deg / top if top > 0 else np.zeros_like(deg)
    return np.column_stack([fied, ndeg])


# ---------------------------------------------------------------- coarsening

@dataclass(frozen=True)
class Coarsening:
    graph: GraphView
    cluster: np.ndarray  # fine node -> coarse node


def coarsen(G: GraphView) -> Coarsening:
    """Greedy heavy-edge matching.

    Edges are visited by descending weight, ties by ``(min, max)`` endpoint
    pair; both endpoints unmatched means they merge.  Coarse node ids follow
    the smallest fine member; coarse edge weights are summed.
    """
    if G.n < 2:
        raise ValueError("coarsening needs at least two nodes")
    A = sp.triu(G.adjacency(), k=1).tocoo()
    order = np.lexsort((A.col, A.row, -A.data))
    mate = np.full(G.n, -1, dtype=np.int64)
    for k in order:
        u, v = int(A.row[k]), int(A.col[k])
        if mate[u] < 0 and mate[v] < 0:
            mate[u], mate[v] = v, u
    rep = np.where(mate >= 0, np.minimum(np.arange(G.n), mate), np.arange(G.n))
    reps = np.unique(rep)
    cluster = np.searchsorted(reps, rep)
    nc = len(reps)
    Wf = G.adjacency().tocoo()
    cu, cv = cluster[Wf.row], cluster[Wf.col]
    keep = cu != cv
    Wc = sp.coo_matrix((Wf.data[keep], (cu[keep], cv[keep])), shape=(nc, nc)).tocsr()
    Wc.sum_duplicates()
    Wc.sort_indices()
    Gc = GraphView(nc, Wc.indptr.astype(np.int64), Wc.indices.astype(np.int64), Wc.data.astype(float))
    return Coarsening(Gc, cluster)


def pooling_matrix(cluster: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """Row-normalized ``(n_coarse, n_fine)`` mean-pooling operator."""
    n = len(cluster)
    counts = np.bincount(cluster, minlength=n_coarse).astype(float)
    return sp.csr_matrix((1.0 / counts[cluster], (cluster, np.arange(n))), shape=(n_coarse, n))


# ---------------------------------------------------------------- layers

def sage_layer(H, G: GraphView, W_self, W_neigh, adjacency=None) -> Tensor:
    """``tanh(H W_self + mean_neighbors(H) W_neigh)``; isolated nodes aggregate zero."""
    H = ad.as_tensor(H)
    W_self, W_neigh = ad.as_tensor(W_self), ad.as_tensor(W_neigh)
    if H.shape[0] != G.n:
        raise ValueError(f"feature rows {H.shape[0]} do not match graph size {G.n}")
    if W_self.shape != W_neigh.shape or H.shape[1] != W_self.shape[0]:
        raise ValueError(
            f"weight shapes {W_self.shape}/{W_neigh.shape} do not fit features {H.shape}")
    adj = G.adjacency() if adjacency is None else adjacency
    agg = ad.mean_neighbor_aggregate(H, adj)
    return ad.tanh(ad.matmul(H, W_self) + ad.matmul(agg, W_neigh))


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def conv_names(cfg: EncoderConfig) -> list[str]:
    k = cfg.num_conv_layers
    if cfg.mode == "sage":
        return [f"conv{i}" for i in range(k)]
    # conv_in opens the finest level, down_first opens every coarser one
    return (["conv_in", "down_first"] + [f"down{i}" for i in range(1, k)]
            + ["bottom"] + [f"up{i}" for i in range(k)])


def init_params(cfg: EncoderConfig, n: int | None = None) -> dict[str, np.ndarray]:
    """Fresh parameter arrays for ``cfg``; direct mode needs ``n``."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == "direct":
        if n is None:
            raise ValueError("direct mode needs the node count")
        return {"scores": 1e-2 * rng.standard_normal(n)}
    h, params = cfg.hidden_dim, {}
    for name in conv_names(cfg):
        fan_in = cfg.in_dim if name in ("conv0", "conv_in") else h
        params[f"{name}.self"] = _glorot(rng, fan_in, h)
        params[f"{name}.neigh"] = _glorot(rng, fan_in, h)
    for i in range(cfg.head_layers):
        out = 1 if i == cfg.head_layers - 1 else h
        params[f"head{i}.weight"] = _glorot(rng, h, out)
        params[f"head{i}.bias"] = np.zeros((1, out))
    return params


class Encoder:
    """Score predictor ``theta -> Y`` recorded on an autodiff tape."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray] | None = None,
                 n: int | None = None):
        self.cfg = cfg
        self.params = init_params(cfg, n) if params is None else {
            k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        return {k: tape.param(v, name=k) for k, v in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    def forward(self, G: GraphView, weights: dict[str, Tensor] | None = None,
                features: np.ndarray | None = None) -> Tensor:
        """Scores ``Y`` of shape ``(n, 1)``."""
        w = self.constants() if weights is None else weights
        if self.cfg.mode == "direct":
            return direct_scores(G.n, w["scores"])
        X = spectral_features(G) if features is None else features
        if X.shape != (G.n, self.cfg.in_dim):
            raise ValueError(f"features have shape {X.shape}, expected {(G.n, self.cfg.in_dim)}")
        if self.cfg.mode == "sage":
            H = ad.as_tensor(X)
            adj = G.adjacency()
            for i in range(self.cfg.num_conv_layers):
                H = sage_layer(H, G, w[f"conv{i}.self"], w[f"conv{i}.neigh"], adj)
            return self._head(H, w)
        return multigrid_forward(G, X, w, self.cfg, head=self._head)

    def _head(self, H: Tensor, w: dict[str, Tensor]) -> Tensor:
        for i in range(self.cfg.head_layers):
            H = ad.matmul(H, w[f"head{i}.weight"]) + w[f"head{i}.bias"]
            if i < self.cfg.head_layers - 1:
                H = ad.tanh(H)
        return H

    def scores(self, G: GraphView, features: np.ndarray | None = None) -> np.ndarray:
        return self.forward(G, features=features).value.ravel()

    # ------------------------------------------------------------ checkpoints

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        cfg = EncoderConfig(**d["config"])
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in d["params"].items()}
        return cls(cfg, params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Encoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


def direct_scores(n: int, theta) -> Tensor:
    theta = ad.as_tensor(theta)
    if theta.value.size != n:
        raise ValueError(f"direct mode has {theta.value.size} scores for {n} nodes")
    return ad.reshape(theta, (n, 1))


def multigrid_forward(G: GraphView, X: np.ndarray, w: dict[str, Tensor], cfg: EncoderConfig,
                      head=None) -> Tensor:
    """V-cycle encoder.

    Down: two convs per level, push (cluster map, features), mean-pool onto
    the matched graph, until at most two nodes remain or matching stalls.
    Bottom: one conv.  Up: broadcast coarse features to their fine members,
    average with the stashed fine features, two convs.
    """
    k = cfg.num_conv_layers
    H = ad.as_tensor(X)
    graph = G
    stack: list[tuple[np.ndarray, Tensor, GraphView]] = []
    first = True

    def conv(name, H, graph, adj):
        return sage_layer(H, graph, w[f"{name}.self"], w[f"{name}.neigh"], adj)

    while graph.n > 2:
        adj = graph.adjacency()
        names = (["conv_in"] if first else ["down_first"]) + [f"down{i}" for i in range(1, k)]
        first = False
        for name in names:
            H = conv(name, H, graph, adj)
        c = coarsen(graph)
        if c.graph.n == graph.n:
            break
        stack.append((c.cluster, H, graph))
        H = ad.spmm(pooling_matrix(c.cluster, c.graph.n), H)
        graph = c.graph
    if first:
        H = conv("conv_in", H, graph, graph.adjacency())
    H = conv("bottom", H, graph, graph.adjacency())
    while stack:
        cluster, H_fine, graph = stack.pop()
        H = ad.scale(ad.row_gather(H, cluster) + H_fine, 0.5)
        adj = graph.adjacency()
        for i in range(k):
            H = conv(f"up{i}", H, graph, adj)
    if head is None:
        return H
    return head(H, w)
