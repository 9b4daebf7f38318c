"""Scikit-learn compatible recommender wrapping graph construction and BPR training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import argc
from ._validation import check_interactions, check_pairs_in_range, check_users
from .argc import ModelConfig
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import DEFAULT_KS, evaluate_embeddings, rank_items
from .graph import build_graph
from .training import TrainConfig, fit_bpr


class TAGCFRecommender(BaseEstimator):
    """Graph collaborative filtering over a user-attribute-item graph.

    Parameters mirror :class:`~tagcf.argc.ModelConfig` and
    :class:`~tagcf.training.TrainConfig`. ``ablation="no_argc"`` replaces the
    gated relation fusion with plain propagation over the full graph;
    ``use_attributes=False`` ignores any attribute edges passed to ``fit``
    (together they give the LightGCN-style baseline, see :func:`make_baseline`).

    Attributes set by ``fit``: ``graph_``, ``embeddings_``, ``gates_``,
    ``n_users_``, ``n_items_``, ``n_attrs_``, ``best_epoch_``,
    ``best_score_``, ``training_log_``.
    """

    def __init__(self, n_layers=3, embed_dim=64, hidden_dim=None, gate_mode="raw",
                 ablation="full", leaky_slope=0.01, init_scale=0.1, gate_bias_init=1.0 / 3,
                 learning_rate=1e-3, reg_lambda=1e-4, batch_size=2048, max_epochs=500,
                 patience=5, eval_metric="recall@20", use_attributes=True, random_state=0,
                 dtype="float32"):
        self.n_layers = n_layers
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.gate_mode = gate_mode
        self.ablation = ablation
        self.leaky_slope = leaky_slope
        self.init_scale = init_scale
        self.gate_bias_init = gate_bias_init
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.eval_metric = eval_metric
        self.use_attributes = use_attributes
        self.random_state = random_state
        self.dtype = dtype

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_layers=self.n_layers, embed_dim=self.embed_dim,
                           hidden_dim=self.hidden_dim, gate_mode=self.gate_mode,
                           ablation=self.ablation, leaky_slope=self.leaky_slope,
                           init_scale=self.init_scale, gate_bias_init=self.gate_bias_init)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, reg_lambda=self.reg_lambda,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience if self.patience else self.max_epochs,
                           eval_metric=self.eval_metric, seed=int(self.random_state or 0))

    def fit(self, X, y=None, *, ua_edges=None, ia_edges=None, n_attrs=None, X_val=None,
            graph=None, n_users=None, n_items=None, mask_val=None):
        """Train on interactions ``X``.

        ``ua_edges`` / ``ia_edges`` are ``(n, 2)`` arrays of ``(user, attr)`` and
        ``(item, attr)`` indices. ``X_val`` enables early stopping on
        ``eval_metric``; without it the final epoch's parameters are kept.
        A prebuilt ``graph`` may be passed instead of edge lists.
        """
        if graph is not None:
            n_users = graph.n_users if n_users is None else n_users
            n_items = graph.n_items if n_items is None else n_items
        pairs, nu, ni = check_interactions(X, n_users, n_items)
        if graph is None:
            if not self.use_attributes:
                ua_edges = ia_edges = None
                n_attrs = None
            graph = build_graph(nu, ni, pairs, ua_edges, ia_edges, n_attrs)
        elif not self.use_attributes:
            graph = graph.bipartite()
        elif (graph.n_users, graph.n_items) != (nu, ni):
            raise ValueError("graph and X disagree on the number of users or items")
        mc, tc = self.model_config(), self.train_config()
        dtype = np.dtype(self.dtype)
        # without validation data every epoch "improves", so the last one is kept
        evaluator = _epoch_counter() if X_val is None else None
        val = None if X_val is None else check_pairs_in_range(
            check_interactions(X_val, nu, ni)[0], nu, ni, "X_val")
        result = fit_bpr(graph, val, mc, tc, train_pairs=pairs, mask_pairs=mask_val,
                         evaluator=evaluator, dtype=dtype)
        self._set_fitted(graph, result.embeddings, result.gates, mc)
        self.best_epoch_ = result.best_epoch
        self.best_score_ = result.best_metric
        self.training_log_ = result.log
        self.diverged_ = result.diverged
        return self

    def _set_fitted(self, graph, embeddings, gates, config):
        self.graph_ = graph
        self.embeddings_ = embeddings
        self.gates_ = gates
        self.n_users_, self.n_items_, self.n_attrs_ = graph.n_users, graph.n_items, graph.n_attrs
        self.config_ = config
        self._final = None

    def final_embeddings(self) -> np.ndarray:
        check_is_fitted(self, "embeddings_")
        if getattr(self, "_final", None) is None:
            self._final = argc.forward(self.graph_, self.embeddings_, self.gates_, self.config_)
        return self._final

    def decision_function(self, users=None) -> np.ndarray:
        """Score matrix ``(len(users), n_items)``; all users when ``users`` is None."""
        x = self.final_embeddings()
        users = np.arange(self.n_users_) if users is None else check_users(users, self.n_users_)
        return argc.score_matrix(x, self.n_users_, self.n_items_, users)

    def predict(self, X) -> np.ndarray:
        """Inner-product score for each ``(user, item)`` row of ``X``."""
        x = self.final_embeddings()
        pairs = check_pairs_in_range(np.asarray(X).reshape(-1, 2), self.n_users_, self.n_items_)
        u = x[pairs[:, 0]]
        i = x[self.n_users_ + pairs[:, 1]]
        return np.einsum("nd,nd->n", u, i)

    def recommend(self, users, k=20, exclude=None) -> np.ndarray:
        """Top-``k`` items per user, excluding ``exclude`` pairs (default: training edges)."""
        users = check_users(users, self.n_users_)
        scores = np.array(self.decision_function(users), dtype=np.float64)
        if exclude is None:
            exclude = self.graph_.ui_pairs()
        exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
        row_of = {int(u): r for r, u in enumerate(users)}
        for u, i in exclude:
            r = row_of.get(int(u))
            if r is not None:
                scores[r, i] = -np.inf
        return rank_items(scores, k)

    def evaluate(self, X_test, exclude=None, ks=DEFAULT_KS, **kwargs):
        """Full-ranking :class:`~tagcf.evaluation.MetricReport` on held-out pairs."""
        x = self.final_embeddings()
        test = check_pairs_in_range(check_interactions(X_test, self.n_users_, self.n_items_)[0],
                                    self.n_users_, self.n_items_, "X_test")
        if exclude is None:
            exclude = self.graph_.ui_pairs()
        return evaluate_embeddings(x, self.n_users_, self.n_items_, test, exclude, ks, **kwargs)

    def score(self, X, y=None):
        """Recall@20 of ``X`` as held-out interactions (training edges masked)."""
        return self.evaluate(X, ks=(20,)).recall[20]

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "embeddings_")
        return Checkpoint(self.config_, self.embeddings_, self.gates_)

    def save(self, path):
        save_checkpoint(self.to_checkpoint(), path)

    @classmethod
    def from_checkpoint(cls, ckpt, graph, **params):
        """Rebuild a fitted estimator from a checkpoint and its graph."""
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        ckpt.check_compatible(graph=graph)
        c = ckpt.config
        est = cls(n_layers=c.n_layers, embed_dim=c.embed_dim, hidden_dim=c.hidden_dim,
                  gate_mode=c.gate_mode, ablation=c.ablation, leaky_slope=c.leaky_slope,
                  **params)
        est._set_fitted(graph, ckpt.embeddings, ckpt.gates, c)
        return est


def make_baseline(estimator: TAGCFRecommender) -> TAGCFRecommender:
    """Attribute-free LightGCN-style counterpart with identical training settings."""
    return clone(estimator).set_params(ablation="no_argc", use_attributes=False)


def _epoch_counter():
    count = [0]

    def metric(x):
        count[0] += 1
        return float(count[0])

    return metric
