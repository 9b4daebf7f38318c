"""Adaptive relation-weighted graph convolution: forward and analytic backward.

Every node ``v`` gets one intermediate vector per relation graph
(``UAI``, ``UA``, ``IA``)::

    v_r = A_r @ x                      A_r = D_r^-1/2 G_r D_r^-1/2
    s_r = W2_r . leaky(W1_r [x, v_r] + b1_r) + b2_r
    x'  = sum_r alpha_r * v_r          alpha = s (raw) or softmax_r(s)

and the final representation is the plain sum of all layer states. Gate
parameters are shared across layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, NumericError, StateError
from .graph import RELATIONS

GATE_MODES = ("raw", "softmax")
ABLATIONS = ("full", "no_argc", "no_ff")


@dataclass
class ModelConfig:
    n_layers: int = 3
    embed_dim: int = 64
    hidden_dim: int | None = None
    gate_mode: str = "raw"
    ablation: str = "full"
    leaky_slope: float = 0.01
    init_scale: float = 0.1
    gate_bias_init: float = 1.0 / len(RELATIONS)

    def __post_init__(self):
        if self.hidden_dim is None:
            self.hidden_dim = self.embed_dim
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be positive")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")

    @property
    def uses_gates(self) -> bool:
        return self.ablation != "no_argc"


@dataclass
class EmbeddingTable:
    """Layer-0 embeddings, stored as one ``(n_users + n_items + n_attrs, d)`` matrix."""

    weight: np.ndarray
    n_users: int
    n_items: int
    n_attrs: int

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def users(self):
        return self.weight[:self.n_users]

    @property
    def items(self):
        return self.weight[self.n_users:self.n_users + self.n_items]

    @property
    def attrs(self):
        return self.weight[self.n_users + self.n_items:]

    def copy(self) -> "EmbeddingTable":
        return replace(self, weight=self.weight.copy())


def init_embeddings(n_users, n_items, n_attrs, dim, seed=0, init_scale=0.1,
                    dtype=np.float32) -> EmbeddingTable:
    """I.i.d. normal entries with standard deviation ``init_scale``."""
    if dim < 1:
        raise ConfigError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    n = n_users + n_items + n_attrs
    w = (rng.standard_normal((n, dim)) * init_scale).astype(dtype)
    return EmbeddingTable(w, n_users, n_items, n_attrs)


@dataclass
class GateParameters:
    """Per-relation gate MLPs stacked along axis 0 in ``RELATIONS`` order.

    Shapes: ``W1 (3, h, 2d)``, ``b1 (3, h)``, ``W2 (3, h)``, ``b2 (3,)``.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def dim(self) -> int:
        return self.W1.shape[2] // 2

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "GateParameters":
        return GateParameters(*(a.copy() for a in self.arrays().values()))

    def astype(self, dtype) -> "GateParameters":
        return GateParameters(*(a.astype(dtype) for a in self.arrays().values()))

    def sq_norm(self) -> float:
        return float(sum(np.sum(a.astype(np.float64) ** 2) for a in self.arrays().values()))

    @classmethod
    def zeros(cls, dim, hidden, dtype=np.float64) -> "GateParameters":
        r = len(RELATIONS)
        return cls(np.zeros((r, hidden, 2 * dim), dtype), np.zeros((r, hidden), dtype),
                   np.zeros((r, hidden), dtype), np.zeros(r, dtype))


def init_gates(dim, hidden, seed=0, bias_init=1.0 / 3, dtype=np.float32) -> GateParameters:
    rng = np.random.default_rng([seed, 1])
    r = len(RELATIONS)
    W1 = rng.standard_normal((r, hidden, 2 * dim)) * np.sqrt(1.0 / (2 * dim))
    W2 = rng.standard_normal((r, hidden)) * 0.01
    return GateParameters(W1.astype(dtype), np.zeros((r, hidden), dtype), W2.astype(dtype),
                          np.full(r, bias_init, dtype))


def leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def relation_aggregate(graph, relation: str, x: np.ndarray) -> np.ndarray:
    """Degree-normalized neighbor sum of ``x`` inside one relation graph."""
    if x.ndim != 2 or x.shape[0] != graph.n_nodes:
        raise ValueError(f"expected x with {graph.n_nodes} rows, got shape {x.shape}")
    adj = graph.normalized(relation)
    return np.asarray(adj @ x).astype(x.dtype, copy=False)


def gate_weight(gates: GateParameters, relation: str, x_v, v_v, slope=0.01) -> float:
    """Raw scalar gate score of one node for one relation."""
    j = RELATIONS.index(relation)
    cat = np.concatenate([np.asarray(x_v, dtype=np.float64), np.asarray(v_v, dtype=np.float64)])
    if cat.shape != (gates.W1.shape[2],):
        raise ValueError("x_v and v_v must both have length d")
    hid = leaky_relu(gates.W1[j] @ cat + gates.b1[j], slope)
    return float(gates.W2[j] @ hid + gates.b2[j])


def softmax_rows(s):
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=1, keepdims=True)


def gate_scores(gates, x, vs, slope):
    """Raw scores ``(N, 3)`` plus the hidden pre-activations needed for backward."""
    d = x.shape[1]
    scores = np.empty((x.shape[0], len(RELATIONS)), dtype=x.dtype)
    pre = []
    for j, v in enumerate(vs):
        W1 = gates.W1[j]
        z = x @ W1[:, :d].T + v @ W1[:, d:].T + gates.b1[j]
        scores[:, j] = leaky_relu(z, slope) @ gates.W2[j] + gates.b2[j]
        pre.append(z)
    return scores, pre


@dataclass
class LayerCache:
    x: np.ndarray
    vs: list | None = None
    pre: list | None = None
    alpha: np.ndarray | None = None


@dataclass
class ForwardCache:
    graph: object
    gates: GateParameters | None
    config: ModelConfig
    layers: list[LayerCache] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)


def argc_layer(graph, gates, x, config: ModelConfig, layer: int = 0, fixed_alpha=None):
    """One propagation step; returns ``(x_next, LayerCache)``.

    ``fixed_alpha`` (scalar or ``(N, 3)``) bypasses the gate network, which the
    reduction tests use to force ``alpha == 1``.
    """
    if not config.uses_gates:
        out = relation_aggregate(graph, "UAI", x)
        cache = LayerCache(x)
    else:
        vs = [relation_aggregate(graph, r, x) for r in RELATIONS]
        if fixed_alpha is not None:
            alpha = np.broadcast_to(np.asarray(fixed_alpha, dtype=x.dtype),
                                    (x.shape[0], len(RELATIONS)))
            pre = None
        else:
            scores, pre = gate_scores(gates, x, vs, config.leaky_slope)
            alpha = softmax_rows(scores) if config.gate_mode == "softmax" else scores
        out = sum(alpha[:, j:j + 1] * v for j, v in enumerate(vs))
        cache = LayerCache(x, vs, pre, alpha)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite embeddings after layer {layer + 1}")
    return out, cache


def forward(graph, embeddings, gates, config: ModelConfig, return_cache=False, fixed_alpha=None):
    """Sum of layer states ``x^(0) + ... + x^(K)``; optionally with a backward cache."""
    x = embeddings.weight if isinstance(embeddings, EmbeddingTable) else embeddings
    if x.shape[0] != graph.n_nodes:
        raise ValueError(f"embedding table has {x.shape[0]} rows, graph has {graph.n_nodes} nodes")
    cache = ForwardCache(graph, gates, config)
    cache.states.append(x)
    total = x.copy()
    for k in range(config.n_layers):
        x, lc = argc_layer(graph, gates, x, config, k, fixed_alpha)
        cache.layers.append(lc)
        cache.states.append(x)
        total += x
    if return_cache:
        return total, cache
    return total


def layer_states(graph, embeddings, gates, config, fixed_alpha=None) -> list[np.ndarray]:
    _, cache = forward(graph, embeddings, gates, config, True, fixed_alpha)
    return cache.states


def score(x, n_users, user, item) -> float:
    """Inner product of a user's and an item's final embedding."""
    return float(x[user] @ x[n_users + item])


def score_matrix(x, n_users, n_items, users=None) -> np.ndarray:
    u = x[:n_users] if users is None else x[np.asarray(users)]
    return u @ x[n_users:n_users + n_items].T


def _layer_backward(graph, gates, config, lc: LayerCache, g, ggrads):
    if not config.uses_gates:
        return np.asarray(graph.normalized("UAI") @ g).astype(g.dtype, copy=False)
    x, vs, alpha = lc.x, lc.vs, lc.alpha
    d = x.shape[1]
    dx = np.zeros_like(x)
    if lc.pre is None:
        # gates bypassed: plain linear map
        for j, r in enumerate(RELATIONS):
            dx += np.asarray(graph.normalized(r) @ (alpha[:, j:j + 1] * g)).astype(g.dtype)
        return dx
    dalpha = np.stack([np.einsum("nd,nd->n", g, v) for v in vs], axis=1)
    if config.gate_mode == "softmax":
        ds = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    else:
        ds = dalpha
    slope = config.leaky_slope
    for j, r in enumerate(RELATIONS):
        v, z = vs[j], lc.pre[j]
        dv = alpha[:, j:j + 1] * g
        act = leaky_relu(z, slope)
        ggrads.W2[j] += act.T @ ds[:, j]
        ggrads.b2[j] += ds[:, j].sum()
        dz = (ds[:, j:j + 1] * gates.W2[j][None, :]) * np.where(z > 0, 1.0, slope).astype(z.dtype)
        ggrads.W1[j, :, :d] += dz.T @ x
        ggrads.W1[j, :, d:] += dz.T @ v
        ggrads.b1[j] += dz.sum(axis=0)
        dx += dz @ gates.W1[j, :, :d]
        dv += dz @ gates.W1[j, :, d:]
        # normalized adjacency is symmetric, so its transpose is itself
        dx += np.asarray(graph.normalized(r) @ dv).astype(g.dtype, copy=False)
    return dx


def backward(cache: ForwardCache | None, grad_final: np.ndarray):
    """Gradients of a scalar loss w.r.t. layer-0 embeddings and gate parameters.

    ``grad_final`` is the loss gradient w.r.t. the summed final embeddings.
    Returns ``(grad_embeddings, grad_gates)``; ``grad_gates`` is ``None`` for
    the un-gated ablation.
    """
    if cache is None or not cache.layers:
        raise StateError("backward() needs the cache of a forward(..., return_cache=True) call")
    config = cache.config
    x0 = cache.states[0]
    if grad_final.shape != x0.shape:
        raise ValueError(f"gradient shape {grad_final.shape} != embedding shape {x0.shape}")
    ggrads = None
    if config.uses_gates and cache.gates is not None:
        g = cache.gates
        ggrads = GateParameters.zeros(g.dim, g.hidden, dtype=grad_final.dtype)
    g = grad_final
    for lc in reversed(cache.layers):
        g = grad_final + _layer_backward(cache.graph, cache.gates, config, lc, g, ggrads)
    return g, ggrads
