"""Spatial zoning of a trajectory into (start, end, zone) occupancy triplets.

Two zoners follow the scikit-learn estimator API and operate on ``(n, 2)``
XY arrays: :class:`GridZoner` (equal square cells) and
:class:`GaussianMixtureZoner` (EM-fitted mixture, one zone per component).
:func:`grid_zones` and :func:`gmm_zones` wrap them for trajectories.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .annotations import Trajectory
from .geometry import GridGeometry, MixtureGeometry, ZoneOccupancy, occupancy_runs

__all__ = [
    "GridZoner",
    "GaussianMixtureZoner",
    "grid_zones",
    "gmm_zones",
]

# positions are snapped to this lattice before binning so that nested cell
# sizes (0.4 inside 1.2) bin consistently despite float rounding
_QUANTUM = 1e-6


def _first_appearance(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relabel ``raw`` ids by first appearance; returns (labels, raw id per new label)."""
    _, first_idx, inverse = np.unique(raw, return_index=True, return_inverse=True, axis=0)
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse.reshape(-1)], order


class GridZoner(ClusterMixin, BaseEstimator):
    """Bin XY points into equal square cells anchored at the fitted minimum corner.

    After ``fit``, ``labels_`` holds zone ids numbered by first appearance
    and ``cells_`` the integer cell coordinates of each zone.
    """

    def __init__(self, cell_size: float = 1.2):
        self.cell_size = cell_size

    def _cells(self, X):
        q = np.round((X - self.anchor_) / _QUANTUM).astype(np.int64)
        return np.floor_divide(q, self.cell_quanta_)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"expected XY points of shape (n, 2), got {X.shape}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        self.anchor_ = X.min(axis=0)
        self.cell_quanta_ = max(1, int(round(self.cell_size / _QUANTUM)))
        cells = self._cells(X)
        self.labels_, order = _first_appearance(cells)
        uniq = np.unique(cells, axis=0)
        self.cells_ = uniq[order]
        return self

    def transform(self, X):
        """Integer cell coordinates of each point."""
        check_is_fitted(self, "cells_")
        return self._cells(check_array(X, dtype=float))

    def predict(self, X):
        """Zone id of each point; -1 for cells never seen during ``fit``."""
        cells = self.transform(X)
        lookup = {tuple(c): z for z, c in enumerate(self.cells_.tolist())}
        return np.array([lookup.get(tuple(c), -1) for c in cells.tolist()], dtype=np.int64)


class GaussianMixtureZoner(ClusterMixin, BaseEstimator):
    """Full-covariance Gaussian mixture fitted by expectation-maximisation.

    Initialisation is k-means++ seeding from ``random_state`` followed by a
    hard nearest-centre assignment; eigenvalues of every covariance are
    floored at ``covariance_floor``. ``labels_`` and ``predict`` return raw
    component indices (argmax responsibility).
    """

    def __init__(self, n_components: int = 5, max_iter: int = 100, tol: float = 1e-8,
                 covariance_floor: float = 1e-6, random_state: Optional[int] = 0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.covariance_floor = covariance_floor
        self.random_state = random_state

    def _kmeans_pp(self, X, rng):
        k = self.n_components
        centers = [X[rng.integers(len(X))]]
        d2 = ((X - centers[0]) ** 2).sum(axis=1)
        for _ in range(1, k):
            centers.append(X[rng.choice(len(X), p=d2 / d2.sum())])
            d2 = np.minimum(d2, ((X - centers[-1]) ** 2).sum(axis=1))
        return np.array(centers)

    def _m_step(self, X, resp):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / len(X)
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty((len(nk), 2, 2))
        for j in range(len(nk)):
            diff = X - means[j]
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
            covs[j] = (vecs * np.maximum(vals, self.covariance_floor)) @ vecs.T
        return weights, means, covs

    def _log_prob(self, X):
        out = np.empty((len(X), len(self.weights_)))
        for j, (m, c) in enumerate(zip(self.means_, self.covariances_)):
            inv = np.linalg.inv(c)
            diff = X - m
            maha = np.einsum("ni,ij,nj->n", diff, inv, diff)
            out[:, j] = -0.5 * (maha + np.log(np.linalg.det(c)) + 2 * np.log(2 * np.pi))
        return out + np.log(self.weights_)

    def _e_step(self, X):
        lp = self._log_prob(X)
        top = lp.max(axis=1, keepdims=True)
        log_norm = top[:, 0] + np.log(np.exp(lp - top).sum(axis=1))
        return np.exp(lp - log_norm[:, None]), float(log_norm.mean())

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        k = self.n_components
        if k < 1:
            raise ValueError(f"n_components must be >= 1, got {k}")
        n_distinct = len(np.unique(X, axis=0))
        if n_distinct < k:
            raise ValueError(f"need at least {k} distinct points for {k} components, got {n_distinct}")
        rng = np.random.default_rng(self.random_state)
        centers = self._kmeans_pp(X, rng)
        nearest = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2).argmin(axis=1)
        resp = np.eye(k)[nearest]
        self.weights_, self.means_, self.covariances_ = self._m_step(X, resp)

        self.converged_ = False
        prev = -np.inf
        self.n_iter_ = 0
        for it in range(1, self.max_iter + 1):
            resp, ll = self._e_step(X)
            self.weights_, self.means_, self.covariances_ = self._m_step(X, resp)
            self.n_iter_ = it
            if abs(ll - prev) < self.tol:
                self.converged_ = True
                break
            prev = ll
        self.lower_bound_ = prev
        self.labels_ = self.predict(X)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "means_")
        return self._e_step(check_array(X, dtype=float))[0]

    def predict(self, X):
        check_is_fitted(self, "means_")
        return self._log_prob(check_array(X, dtype=float)).argmax(axis=1)


def _pose_points(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    frames = traj.frames
    if len(frames) == 0:
        raise ValueError("trajectory has no pose-bearing frames")
    return frames, traj.xy[frames]


def grid_zones(traj: Trajectory, cell_size: float = 1.2) -> ZoneOccupancy:
    frames, xy = _pose_points(traj)
    zoner = GridZoner(cell_size=cell_size).fit(xy)
    geometry = GridGeometry(tuple(float(v) for v in zoner.anchor_), float(cell_size),
                            tuple(tuple(int(v) for v in c) for c in zoner.cells_))
    return ZoneOccupancy(tuple(occupancy_runs(frames, zoner.labels_)), geometry)


def gmm_zones(traj: Trajectory, k: int = 5, seed: Optional[int] = 0, max_iters: int = 100) -> ZoneOccupancy:
    frames, xy = _pose_points(traj)
    zoner = GaussianMixtureZoner(n_components=k, max_iter=max_iters, random_state=seed).fit(xy)
    labels, order = _first_appearance(zoner.labels_)
    # components that own no frame get no zone
    comps = np.unique(zoner.labels_)[order]
    geometry = MixtureGeometry(
        means=tuple(tuple(float(v) for v in zoner.means_[j]) for j in comps),
        covariances=tuple(tuple(tuple(float(v) for v in row) for row in zoner.covariances_[j]) for j in comps),
        weights=tuple(float(zoner.weights_[j]) for j in comps),
        seed=seed,
        max_iter=max_iters,
    )
    return ZoneOccupancy(tuple(occupancy_runs(frames, labels)), geometry)
