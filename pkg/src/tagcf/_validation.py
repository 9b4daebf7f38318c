"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .data import InteractionDataset


def check_interactions(X, n_users=None, n_items=None):
    """Coerce ``X`` to an ``(n, 2)`` int64 pair array plus the index-space sizes.

    Accepts an :class:`InteractionDataset`, a sparse or dense user x item
    matrix (non-zeros are interactions), or an array-like of index pairs.
    """
    if isinstance(X, InteractionDataset):
        return X.pairs, X.n_users, X.n_items
    if sp.issparse(X):
        coo = sp.coo_matrix(X)
        keep = coo.data != 0
        pairs = np.column_stack([coo.row[keep], coo.col[keep]]).astype(np.int64)
        return pairs, n_users or X.shape[0], n_items or X.shape[1]
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (user, item) pairs, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("user and item indices must be integers")
    pairs = arr.astype(np.int64).reshape(-1, 2)
    if len(pairs) and pairs.min() < 0:
        raise ValueError("indices must be non-negative")
    nu = int(pairs[:, 0].max(initial=-1)) + 1
    ni = int(pairs[:, 1].max(initial=-1)) + 1
    if n_users is not None:
        if nu > n_users:
            raise ValueError(f"user index {nu - 1} >= n_users={n_users}")
        nu = n_users
    if n_items is not None:
        if ni > n_items:
            raise ValueError(f"item index {ni - 1} >= n_items={n_items}")
        ni = n_items
    return pairs, nu, ni


def check_pairs_in_range(pairs, n_users, n_items, name="X"):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs[:, 0].max() >= n_users or pairs[:, 1].max() >= n_items
                       or pairs.min() < 0):
        raise ValueError(f"{name} references users/items outside the fitted index space")
    return pairs


def check_users(users, n_users):
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    if users.ndim != 1:
        raise ValueError("users must be a 1-d array of indices")
    if len(users) and (users.min() < 0 or users.max() >= n_users):
        raise ValueError(f"user index outside [0, {n_users})")
    return users
