"""Column network: layer-wise context aggregation, gated hidden units, softmax.

Every entity owns a column of ``T`` hidden layers. Layer ``t`` reads the
entity's own previous activation and, for each relation ``r``, the mean of
its ``r``-neighbours' previous activations (the context)::

    c_ir = mean_{j in N_r(i)} h_j^{t-1}
    h_i^t = relu(b^t + gw_i * W^t h_i^{t-1} + (1/z) sum_r gc_ir * V_r^t c_ir)

``gw`` and ``gc`` are advice gates; they are 1 for a vanilla network.
All entities are computed in one batch per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import UNLABELED, KnowledgeGraph
from .numerics import PROB_FLOOR, glorot_init, relu, softmax

CHECKPOINT_VERSION = 1


class NumericError(ArithmeticError):
    """Non-finite values appeared during a forward or backward pass."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


@dataclass(frozen=True)
class CLNConfig:
    num_layers: int
    hidden_units: int
    z: float
    num_labels: int
    feature_dim: int
    relation_names: tuple
    activation: str = "relu"
    tie_layers: bool = False

    def __post_init__(self):
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        if self.num_layers < 1 or self.hidden_units < 1:
            raise ValueError("num_layers and hidden_units must be >= 1")
        if self.z < 1:
            raise ValueError(f"z must be >= 1, got {self.z}")
        if self.num_labels < 1 or self.feature_dim < 1:
            raise ValueError("num_labels and feature_dim must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @classmethod
    def for_graph(cls, g: KnowledgeGraph, num_layers=10, hidden_units=40, z=None,
                  tie_layers=False) -> "CLNConfig":
        from .graph import context_normalizer

        return cls(
            num_layers=num_layers,
            hidden_units=hidden_units,
            z=context_normalizer(g) if z is None else z,
            num_labels=g.num_labels,
            feature_dim=g.feature_dim,
            relation_names=tuple(g.relation_names),
            tie_layers=tie_layers,
        )

    @property
    def num_blocks(self) -> int:
        return min(self.num_layers, 2) if self.tie_layers else self.num_layers

    def block(self, t: int) -> int:
        """Parameter block used by layer ``t`` (0-based)."""
        return min(t, 1) if self.tie_layers else t

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_units": self.hidden_units,
            "z": self.z,
            "num_labels": self.num_labels,
            "feature_dim": self.feature_dim,
            "relation_names": list(self.relation_names),
            "activation": self.activation,
            "tie_layers": self.tie_layers,
        }


@dataclass
class CLNParams:
    """All trainable weights; ``V[blk][r]`` is indexed by relation position."""

    W: list
    V: list
    b: list
    W_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, cfg: CLNConfig, seed) -> "CLNParams":
        rng = np.random.default_rng(seed)
        W, V, b = [], [], []
        for blk in range(cfg.num_blocks):
            fan_in = cfg.feature_dim if blk == 0 else cfg.hidden_units
            W.append(glorot_init(cfg.hidden_units, fan_in, rng))
            V.append([glorot_init(cfg.hidden_units, fan_in, rng) for _ in cfg.relation_names])
            b.append(np.zeros(cfg.hidden_units))
        W_out = glorot_init(cfg.num_labels, cfg.hidden_units, rng)
        return cls(W, V, b, W_out, np.zeros(cfg.num_labels))

    @classmethod
    def zeros_like(cls, other: "CLNParams") -> "CLNParams":
        return cls(
            [np.zeros_like(w) for w in other.W],
            [[np.zeros_like(v) for v in vs] for vs in other.V],
            [np.zeros_like(x) for x in other.b],
            np.zeros_like(other.W_out),
            np.zeros_like(other.b_out),
        )

    def named_arrays(self) -> list:
        """Stable ``(name, array)`` listing of every parameter."""
        out = []
        for blk, w in enumerate(self.W):
            out.append((f"W.{blk}", w))
            for r, v in enumerate(self.V[blk]):
                out.append((f"V.{blk}.{r}", v))
            out.append((f"b.{blk}", self.b[blk]))
        out.append(("W_out", self.W_out))
        out.append(("b_out", self.b_out))
        return out

    def set_array(self, name: str, value: np.ndarray) -> None:
        parts = name.split(".")
        if parts[0] == "W":
            self.W[int(parts[1])] = value
        elif parts[0] == "V":
            self.V[int(parts[1])][int(parts[2])] = value
        elif parts[0] == "b":
            self.b[int(parts[1])] = value
        elif name == "W_out":
            self.W_out = value
        elif name == "b_out":
            self.b_out = value
        else:
            raise KeyError(name)

    def copy(self) -> "CLNParams":
        return CLNParams(
            [w.copy() for w in self.W],
            [[v.copy() for v in vs] for vs in self.V],
            [x.copy() for x in self.b],
            self.W_out.copy(),
            self.b_out.copy(),
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for _, a in self.named_arrays()])

    def unflatten(self, flat: np.ndarray) -> "CLNParams":
        new = self.copy()
        pos = 0
        for name, a in self.named_arrays():
            new.set_array(name, np.asarray(flat[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return new

    def check_shapes(self, cfg: CLNConfig) -> None:
        if len(self.W) != cfg.num_blocks:
            raise ValueError(f"expected {cfg.num_blocks} layer blocks, got {len(self.W)}")
        for blk in range(cfg.num_blocks):
            fan_in = cfg.feature_dim if blk == 0 else cfg.hidden_units
            shape = (cfg.hidden_units, fan_in)
            if self.W[blk].shape != shape:
                raise ValueError(f"W.{blk} has shape {self.W[blk].shape}, expected {shape}")
            if len(self.V[blk]) != len(cfg.relation_names):
                raise ValueError(f"V.{blk} has {len(self.V[blk])} relations")
            for r, v in enumerate(self.V[blk]):
                if v.shape != shape:
                    raise ValueError(f"V.{blk}.{r} has shape {v.shape}, expected {shape}")
            if self.b[blk].shape != (cfg.hidden_units,):
                raise ValueError(f"b.{blk} has wrong shape")
        if self.W_out.shape != (cfg.num_labels, cfg.hidden_units):
            raise ValueError("W_out has wrong shape")
        if self.b_out.shape != (cfg.num_labels,):
            raise ValueError("b_out has wrong shape")


@dataclass
class GateSet:
    """Per-entity hidden gates and per-(entity, relation) context gates."""

    gamma_w: np.ndarray
    gamma_c: np.ndarray
    alpha: float = 0.0

    @classmethod
    def ones(cls, num_entities: int, num_relations: int, alpha=0.0) -> "GateSet":
        return cls(np.ones(num_entities), np.ones((num_entities, num_relations)), alpha)

    def stats(self) -> tuple:
        allg = np.concatenate([self.gamma_w, self.gamma_c.reshape(-1)])
        if allg.size == 0:
            return 1.0, 1.0, 1.0
        return float(allg.min()), float(allg.mean()), float(allg.max())


@dataclass
class ForwardCache:
    pre: list
    hidden: list
    contexts: list
    logits: np.ndarray
    probs: np.ndarray
    gates: GateSet | None = None
    extras: dict = field(default_factory=dict)


def mean_operator(g: KnowledgeGraph, relation: str) -> sp.csr_matrix:
    """Row-normalised adjacency; rows of isolated entities are all zero."""
    key = ("mean", relation)
    op = g._adjacency.get(key)
    if op is None:
        adj = g.adjacency(relation)
        deg = np.asarray(adj.sum(axis=1)).reshape(-1)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        op = sp.diags(inv) @ adj
        op = sp.csr_matrix(op)
        op.sort_indices()
        g._adjacency[key] = op
        g._adjacency[("meanT", relation)] = sp.csr_matrix(op.T)
    return op


def _operators(g, cfg):
    ops, ops_t = [], []
    for r in cfg.relation_names:
        if r in g.relations:
            ops.append(mean_operator(g, r))
            ops_t.append(g._adjacency[("meanT", r)])
        else:
            # relation known to the model but absent from this graph
            empty = sp.csr_matrix((g.num_entities, g.num_entities))
            ops.append(empty)
            ops_t.append(empty)
    return ops, ops_t


def _input_matrix(g: KnowledgeGraph) -> np.ndarray:
    x = g._adjacency.get("dense_x")
    if x is None:
        x = g.dense_features()
        g._adjacency["dense_x"] = x
    return x


def _check_finite(a, what, layer):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite {what} at layer {layer}", layer=layer)


def forward(g: KnowledgeGraph, cfg: CLNConfig, params: CLNParams,
            gates: GateSet | None = None) -> ForwardCache:
    """Run every column through all layers and the softmax output."""
    # overflow surfaces as NumericError from the finiteness checks instead
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(g, cfg, params, gates)


def _forward(g, cfg, params, gates) -> ForwardCache:
    params.check_shapes(cfg)
    if g.feature_dim != cfg.feature_dim:
        raise ValueError(f"graph has {g.feature_dim} features, config {cfg.feature_dim}")
    n = g.num_entities
    if gates is not None:
        if gates.gamma_w.shape != (n,) or gates.gamma_c.shape != (n, len(cfg.relation_names)):
            raise ValueError("gate shapes do not match graph and relations")
    ops, _ = _operators(g, cfg)
    h = _input_matrix(g)
    pre_list, hidden, contexts = [], [h], []
    inv_z = 1.0 / cfg.z
    for t in range(cfg.num_layers):
        blk = cfg.block(t)
        own = h @ params.W[blk].T
        if gates is not None:
            own = own * gates.gamma_w[:, None]
        ctx_total = np.zeros((n, cfg.hidden_units))
        layer_ctx = []
        for r, op in enumerate(ops):
            c = op @ h
            layer_ctx.append(c)
            term = c @ params.V[blk][r].T
            if gates is not None:
                term = term * gates.gamma_c[:, r][:, None]
            ctx_total = ctx_total + term
        pre = params.b[blk] + own + inv_z * ctx_total
        _check_finite(pre, "pre-activation", t + 1)
        h = relu(pre)
        pre_list.append(pre)
        hidden.append(h)
        contexts.append(layer_ctx)
    logits = params.b_out + h @ params.W_out.T
    _check_finite(logits, "logits", cfg.num_layers + 1)
    probs = softmax(logits, axis=1)
    return ForwardCache(pre_list, hidden, contexts, logits, probs, gates)


def _check_ids(g, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty id set")
    if np.any(g.labels[ids] == UNLABELED):
        raise ValueError("id set contains unlabeled entities")
    return ids


def loss(cache: ForwardCache, g: KnowledgeGraph, ids) -> float:
    """Mean cross-entropy over ``ids`` against the graph labels."""
    ids = _check_ids(g, ids)
    p = cache.probs[ids, g.labels[ids]]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def data_output_delta(probs: np.ndarray, g: KnowledgeGraph, ids) -> np.ndarray:
    """d(mean CE)/d(logits): ``(P - onehot(y)) / |ids|`` on ``ids`` rows, 0 elsewhere."""
    ids = _check_ids(g, ids)
    delta = np.zeros_like(probs)
    delta[ids] = probs[ids]
    delta[ids, g.labels[ids]] -= 1.0
    delta[ids] /= ids.size
    return delta


def backward(cache: ForwardCache, g: KnowledgeGraph, cfg: CLNConfig, params: CLNParams,
             ids, gates: GateSet | None = None, delta: np.ndarray | None = None) -> CLNParams:
    """Exact parameter gradients of the mean loss over ``ids``.

    ``delta`` overrides the gradient at the logits (``N x |L|``), used by the
    combined-loss objective; by default it is the cross-entropy gradient.
    Gates are constants here: no gradient flows into them.
    """
    if gates is None:
        gates = cache.gates
    if len(cache.hidden) != cfg.num_layers + 1:
        raise ValueError("cache does not match config depth")
    params.check_shapes(cfg)
    if delta is None:
        delta = data_output_delta(cache.probs, g, ids)
    elif delta.shape != cache.probs.shape:
        raise ValueError("delta shape does not match output shape")
    _, ops_t = _operators(g, cfg)
    grads = CLNParams.zeros_like(params)
    h_top = cache.hidden[-1]
    grads.W_out = delta.T @ h_top
    grads.b_out = delta.sum(axis=0)
    d_h = delta @ params.W_out
    inv_z = 1.0 / cfg.z
    for t in reversed(range(cfg.num_layers)):
        blk = cfg.block(t)
        d_pre = d_h * (cache.pre[t] > 0)
        h_prev = cache.hidden[t]
        grads.b[blk] = grads.b[blk] + d_pre.sum(axis=0)
        d_own = d_pre if gates is None else d_pre * gates.gamma_w[:, None]
        grads.W[blk] = grads.W[blk] + d_own.T @ h_prev
        if t == 0:
            # inputs are fixed features; nothing further to propagate
            for r in range(len(cfg.relation_names)):
                d_term = inv_z * d_pre if gates is None else inv_z * d_pre * gates.gamma_c[:, r][:, None]
                grads.V[blk][r] = grads.V[blk][r] + d_term.T @ cache.contexts[t][r]
            break
        d_prev = d_own @ params.W[blk]
        for r in range(len(cfg.relation_names)):
            d_term = inv_z * d_pre if gates is None else inv_z * d_pre * gates.gamma_c[:, r][:, None]
            grads.V[blk][r] = grads.V[blk][r] + d_term.T @ cache.contexts[t][r]
            d_ctx = d_term @ params.V[blk][r]
            d_prev = d_prev + ops_t[r] @ d_ctx
        _check_finite(d_prev, "gradient", t)
        d_h = d_prev
    return grads


def predict(cache: ForwardCache, i: int) -> tuple:
    """Argmax label (ties to the lower index) and the full distribution."""
    p = cache.probs[i]
    return int(np.argmax(p)), p.copy()


def predict_all(cache: ForwardCache) -> np.ndarray:
    return np.argmax(cache.probs, axis=1)


def save_checkpoint(path, cfg: CLNConfig, params: CLNParams, gates: GateSet | None = None,
                    meta: dict | None = None) -> None:
    """Write config, parameters and (optionally) inference gates to an ``.npz``."""
    arrays = {name: a for name, a in params.named_arrays()}
    header = {"version": CHECKPOINT_VERSION, "config": cfg.to_dict(),
              "shapes": {name: list(a.shape) for name, a in arrays.items()},
              "meta": meta or {}}
    if gates is not None:
        arrays["gates.gamma_w"] = gates.gamma_w
        arrays["gates.gamma_c"] = gates.gamma_c
        header["gate_alpha"] = gates.alpha
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path) -> tuple:
    """Inverse of :func:`save_checkpoint`; returns ``(cfg, params, gates, meta)``."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = CLNConfig(**header["config"])
        params = CLNParams.init(cfg, 0)
        for name, shape in header["shapes"].items():
            arr = np.array(data[name], dtype=np.float64)
            if list(arr.shape) != shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != header {shape}")
            params.set_array(name, arr)
        gates = None
        if "gates.gamma_w" in data.files:
            gates = GateSet(np.array(data["gates.gamma_w"]), np.array(data["gates.gamma_c"]),
                            header.get("gate_alpha", 0.0))
    return cfg, params, gates, header.get("meta", {})
