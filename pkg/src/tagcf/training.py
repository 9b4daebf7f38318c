"""BPR training with uniform negative sampling, Adam, and early stopping."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import argc
from .argc import EmbeddingTable, GateParameters, ModelConfig
from .exceptions import ConfigError, NumericError, SamplingError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    reg_lambda: float = 1e-4
    batch_size: int = 2048
    max_epochs: int = 500
    patience: int = 5
    eval_metric: str = "recall@20"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.reg_lambda < 0:
            raise ConfigError("learning_rate must be positive and reg_lambda non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        parse_metric(self.eval_metric)


def parse_metric(name: str) -> tuple[str, int]:
    kind, _, k = name.lower().partition("@")
    if kind not in ("recall", "ndcg") or not k.isdigit() or int(k) < 1:
        raise ConfigError(f"eval_metric must look like 'recall@20' or 'ndcg@5', got {name!r}")
    return kind, int(k)


class PositiveIndex:
    """Fast membership test for observed (user, item) pairs."""

    def __init__(self, pairs, n_users, n_items):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self.n_users = n_users
        self.n_items = n_items
        self.codes = np.unique(pairs[:, 0] * n_items + pairs[:, 1])
        self.degree = np.bincount(pairs[:, 0], minlength=n_users)

    def contains(self, users, items) -> np.ndarray:
        codes = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items)
        if not len(self.codes):
            return np.zeros(codes.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.codes, codes), len(self.codes) - 1)
        return self.codes[pos] == codes


def sample_negatives(index: PositiveIndex, users, rng) -> np.ndarray:
    """One uniformly drawn non-interacted item per entry of ``users``."""
    users = np.asarray(users, dtype=np.int64)
    full = users[index.degree[users] >= index.n_items]
    if len(full):
        raise SamplingError(f"user {int(full[0])} has interacted with every item")
    neg = rng.integers(0, index.n_items, size=len(users))
    bad = np.flatnonzero(index.contains(users, neg))
    while len(bad):
        neg[bad] = rng.integers(0, index.n_items, size=len(bad))
        bad = bad[index.contains(users[bad], neg[bad])]
    return neg


def bpr_loss(x_final, triples, x0, gates, reg_lambda, n_users):
    """BPR loss with L2 on the batch's layer-0 rows and on the gate parameters.

    Returns ``(loss, grad_final, grad_x0_reg, grad_gates_reg)``; the last is
    ``None`` when ``gates`` is ``None``.
    """
    triples = np.asarray(triples, dtype=np.int64)
    u, i, j = triples[:, 0], n_users + triples[:, 1], n_users + triples[:, 2]
    xu, xi, xj = x_final[u], x_final[i], x_final[j]
    diff = np.einsum("nd,nd->n", xu, xi - xj).astype(np.float64)
    # -log sigmoid(t) = logaddexp(0, -t), stable for large |t|
    data_loss = float(np.sum(np.logaddexp(0.0, -diff)))
    coef = (-0.5 * (1.0 - np.tanh(0.5 * diff))).astype(x_final.dtype)  # = -sigmoid(-diff)
    grad = np.zeros_like(x_final)
    np.add.at(grad, u, coef[:, None] * (xi - xj))
    np.add.at(grad, i, coef[:, None] * xu)
    np.add.at(grad, j, -coef[:, None] * xu)

    rows = np.concatenate([u, i, j])
    ego = x0[rows].astype(np.float64)
    reg = float(np.sum(ego ** 2))
    grad_x0 = np.zeros_like(x0)
    if reg_lambda:
        np.add.at(grad_x0, rows, (2.0 * reg_lambda) * x0[rows])
    grad_gates = None
    if gates is not None:
        reg += gates.sq_norm()
        grad_gates = GateParameters(*(2.0 * reg_lambda * a for a in gates.arrays().values()))
    loss = data_loss + reg_lambda * reg
    return loss, grad, grad_x0, grad_gates


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, grads: dict):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            p, m, v = self.params[k], self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainResult:
    embeddings: EmbeddingTable
    gates: GateParameters
    config: ModelConfig
    best_epoch: int
    best_metric: float
    log: list[dict] = field(default_factory=list)
    diverged: bool = False

    def write_log(self, path):
        write_training_log(self.log, path)


def write_training_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_metric", "elapsed_seconds"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['val_metric']:.6f}",
                        f"{r['elapsed_seconds']:.3f}"])


def fit_bpr(graph, val_pairs, model_config: ModelConfig, train_config: TrainConfig,
            train_pairs=None, mask_pairs=None, evaluator=None, dtype=np.float32,
            init=None) -> TrainResult:
    """Train on the graph's U-I edges (or ``train_pairs``) with early stopping.

    After each epoch the model is scored on ``val_pairs`` with ``evaluator``
    (default: full-ranking ``train_config.eval_metric`` masking train
    positives). The best epoch's parameters are returned.
    """
    from .evaluation import metric_from_embeddings

    mc, tc = model_config, train_config
    if train_pairs is None:
        train_pairs = graph.ui_pairs()
    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    if mask_pairs is None:
        mask_pairs = train_pairs
    kind, k = parse_metric(tc.eval_metric)
    if evaluator is None:
        def evaluator(x):
            return metric_from_embeddings(x, graph.n_users, graph.n_items, val_pairs,
                                          mask_pairs, kind, k)

    if init is None:
        emb = init_embeddings_for(graph, mc, tc.seed, dtype)
        gates = argc.init_gates(mc.embed_dim, mc.hidden_dim, tc.seed, mc.gate_bias_init, dtype)
    else:
        emb, gates = init[0].copy(), init[1].copy()
    params = {"emb": emb.weight}
    if mc.uses_gates:
        params.update(gates.arrays())
    opt = Adam(params, lr=tc.learning_rate)
    index = PositiveIndex(train_pairs, graph.n_users, graph.n_items)
    rng = np.random.default_rng([tc.seed, 2])

    best = (emb.copy(), gates.copy())
    best_metric, best_epoch = -math.inf, 0
    bad_epochs = 0
    log = []
    t0 = time.perf_counter()
    diverged = False
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        try:
            for b, start in enumerate(range(0, len(order), tc.batch_size)):
                batch = train_pairs[order[start:start + tc.batch_size]]
                neg = sample_negatives(index, batch[:, 0], rng)
                triples = np.column_stack([batch, neg])
                epoch_loss += _step(graph, emb, gates, mc, triples, tc.reg_lambda, opt, b)
        except NumericError as exc:
            logger.warning("training diverged in epoch %d: %s", epoch, exc)
            diverged = True
            break
        x = argc.forward(graph, emb, gates, mc)
        metric = float(evaluator(x))
        log.append({"epoch": epoch, "loss": epoch_loss, "val_metric": metric,
                    "elapsed_seconds": time.perf_counter() - t0})
        logger.debug("epoch %d loss %.4f %s %.4f", epoch, epoch_loss, tc.eval_metric, metric)
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best = (emb.copy(), gates.copy())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tc.patience:
                break
    return TrainResult(best[0], best[1], mc, best_epoch, best_metric, log, diverged)


def _step(graph, emb, gates, mc, triples, reg_lambda, opt, batch_index=0) -> float:
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            x_final, cache = argc.forward(graph, emb, gates, mc, return_cache=True)
    except NumericError as exc:
        raise NumericError(f"{exc} in batch {batch_index}") from None
    use_gates = gates if mc.uses_gates else None
    loss, g_final, g_x0, g_gates = bpr_loss(x_final, triples, emb.weight, use_gates,
                                            reg_lambda, graph.n_users)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite BPR loss in batch {batch_index}")
    d_x0, d_gates = argc.backward(cache, g_final)
    grads = {"emb": d_x0 + g_x0}
    if use_gates is not None:
        for name, arr in d_gates.arrays().items():
            grads[name] = arr + getattr(g_gates, name)
    opt.step(grads)
    return loss


def init_embeddings_for(graph, mc: ModelConfig, seed, dtype=np.float32) -> EmbeddingTable:
    return argc.init_embeddings(graph.n_users, graph.n_items, graph.n_attrs, mc.embed_dim,
                                seed, mc.init_scale, dtype)
