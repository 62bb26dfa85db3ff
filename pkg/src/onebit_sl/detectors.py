"""Supervised-learning detectors for binary observations.

Every ``detect_*`` function takes either a single observation of length N
(returns an ``int`` class index) or a (B, N) batch (returns an int64 array).
All argmins break ties toward the lowest class index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabelledDataset

__all__ = [
    "FitError",
    "CentroidParams",
    "GaussianParams",
    "BernoulliParams",
    "fit_centroid",
    "fit_gaussian",
    "fit_bernoulli",
    "detect_mcd",
    "detect_mahalanobis",
    "detect_emld",
    "detect_mmd",
    "detect_bernoulli",
    "bernoulli_scores",
    "hamming_distances",
    "save_params",
    "load_params",
]

# float elements per temporary (classes x batch x N) block
_BLOCK = 1 << 22


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CentroidParams:
    means: np.ndarray  # (C, N)


@dataclass(frozen=True)
class GaussianParams:
    means: np.ndarray  # (C, N)
    covariances: np.ndarray  # (C, N, N), shrunk
    precisions: np.ndarray  # (C, N, N)


@dataclass(frozen=True)
class BernoulliParams:
    signatures: np.ndarray  # (C, N) int8 +-1
    flip_probs: np.ndarray  # (C, N), floored
    weights: np.ndarray  # (C, N), -log(flip_probs)
    raw_flip_probs: np.ndarray  # (C, N), before the floor

    @property
    def num_classes(self) -> int:
        return self.signatures.shape[0]


def _as_batch(r):
    r = np.asarray(r)
    if r.ndim == 1:
        return r[None, :], True
    if r.ndim == 2:
        return r, False
    raise ValueError(f"observation must be 1-D or 2-D, got shape {r.shape}")


def _finish(idx: np.ndarray, single: bool):
    idx = idx.astype(np.int64)
    return int(idx[0]) if single else idx


def _ordered_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis, strictly left to right.

    ``np.sum`` picks its association order from the array shape, so the same
    row can round differently inside different batches; this cannot.
    """
    cols = np.moveaxis(x, -1, 0)
    acc = cols[0].copy()
    for col in cols[1:]:
        acc += col
    return acc


def _chunks(B: int, per_row: int):
    step = max(1, _BLOCK // max(per_row, 1))
    for start in range(0, B, step):
        yield slice(start, min(B, start + step))


# ---------------------------------------------------------------- fitting


def fit_centroid(D: LabelledDataset) -> CentroidParams:
    return CentroidParams(D.observations.mean(axis=1, dtype=np.float64))


def fit_gaussian(D: LabelledDataset, shrinkage: float = 0.1) -> GaussianParams:
    """Per-class ML mean and covariance, shrunk toward a scaled identity.

    The shrunk covariance is ``(1 - lam) * S + lam * trace(S) / N * I``;
    a class with ``trace(S) == 0`` shrinks toward ``I`` instead.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    X = D.observations.astype(np.float64)
    C, T, N = X.shape
    means = X.mean(axis=1)
    centred = X - means[:, None, :]
    raw = np.einsum("ctn,ctk->cnk", centred, centred) / T
    target = np.trace(raw, axis1=1, axis2=2) / N
    # pilots that never vary (noiseless links) get a unit-variance target
    target[target == 0] = 1.0
    cov = (1.0 - shrinkage) * raw + shrinkage * target[:, None, None] * np.eye(N)
    # Cholesky doubles as the positive-definiteness check
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise FitError(
            f"shrunk covariance is singular at shrinkage={shrinkage}; use a larger shrinkage"
        ) from None
    diag = np.diagonal(chol, axis1=1, axis2=2)
    if np.any(diag.min(axis=1) <= 1e-7 * diag.max(axis=1)):
        raise FitError(
            f"shrunk covariance is ill-conditioned at shrinkage={shrinkage}; use a larger shrinkage"
        )
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
    return GaussianParams(means, cov, prec)


def fit_bernoulli(D: LabelledDataset, eps_floor: float = 1e-3) -> BernoulliParams:
    """ML signatures and flip probabilities of the Bernoulli-like model.

    The signature is the per-coordinate majority bit (ties go to +1); the
    flip probability is the fraction of pilots disagreeing with it, floored
    at ``eps_floor`` so no weight is infinite.
    """
    if not 0.0 < eps_floor < 0.5:
        raise ValueError(f"eps_floor must lie in (0, 0.5), got {eps_floor}")
    obs = D.observations
    sums = obs.sum(axis=1, dtype=np.int64)
    signatures = np.where(sums >= 0, 1, -1).astype(np.int8)
    disagree = (obs != signatures[:, None, :]).sum(axis=1)
    raw = disagree / D.T
    flip = np.maximum(raw, eps_floor)
    return BernoulliParams(signatures, flip, -np.log(flip), raw)


# ---------------------------------------------------------------- detection


def detect_mcd(r, p: CentroidParams):
    """Nearest class mean in squared Euclidean distance."""
    R, single = _as_batch(r)
    means = p.means
    C, N = means.shape
    out = np.empty(R.shape[0], dtype=np.int64)
    for sl in _chunks(R.shape[0], C * N):
        diff = R[sl][None, :, :] - means[:, None, :]  # (C, b, N)
        out[sl] = np.argmin(_ordered_sum(diff * diff), axis=0)
    return _finish(out, single)


def detect_mahalanobis(r, p: GaussianParams):
    R, single = _as_batch(r)
    means, prec = p.means, p.precisions
    C, N = means.shape
    out = np.empty(R.shape[0], dtype=np.int64)
    for sl in _chunks(R.shape[0], C * N):
        diff = R[sl][None, :, :] - means[:, None, :]  # (C, b, N)
        proj = np.matmul(diff, prec)
        out[sl] = np.argmin(_ordered_sum(proj * diff), axis=0)
    return _finish(out, single)


def hamming_distances(R: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between +-1 rows, shape (len(R), len(X))."""
    R = np.atleast_2d(R).astype(np.float32)
    X = np.atleast_2d(X).astype(np.float32)
    # exact: integer dot products far below 2**24
    return ((R.shape[1] - R @ X.T) / 2).astype(np.int64)


def detect_emld(r, D: LabelledDataset, k: int = 5):
    """k-nearest-neighbour majority vote over all pilot observations.

    Distance ties keep (class, pilot) order; vote ties go to the lowest class.
    """
    points, labels = D.flat()
    if not 1 <= k <= len(points):
        raise ValueError(f"k must lie in [1, {len(points)}], got {k}")
    R, single = _as_batch(r)
    C = D.num_classes
    out = np.empty(R.shape[0], dtype=np.int64)
    for sl in _chunks(R.shape[0], len(points)):
        dist = hamming_distances(R[sl], points)
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        votes = np.zeros((dist.shape[0], C), dtype=np.int64)
        rows = np.repeat(np.arange(dist.shape[0]), k)
        np.add.at(votes, (rows, labels[nearest].ravel()), 1)
        out[sl] = np.argmax(votes, axis=1)
    return _finish(out, single)


def detect_mmd(r, D: LabelledDataset):
    """Class of the single closest pilot observation."""
    points, labels = D.flat()
    R, single = _as_batch(r)
    out = np.empty(R.shape[0], dtype=np.int64)
    for sl in _chunks(R.shape[0], len(points)):
        sq = np.stack([np.sum((points - x) ** 2, axis=1) for x in R[sl].astype(np.int32)])
        out[sl] = labels[np.argmin(sq, axis=1)]
    return _finish(out, single)


def bernoulli_scores(r, p: BernoulliParams, classes=None, exact: bool = False) -> np.ndarray:
    """Detector metric of one observation against ``classes`` (default: all).

    Default mode is the weighted distance
    ``(r - mu_c)^T diag(-log eps_c) (r - mu_c)``, i.e. four times the summed
    weights of disagreeing coordinates. ``exact=True`` returns the full
    negative log-likelihood, which also charges ``-log(1 - eps)`` for every
    agreeing coordinate.

    A class's score depends only on its own row and is summed in a fixed
    order, so scoring a subset gives bit-identical values to scoring all.
    """
    r = np.asarray(r)
    sig, w = p.signatures, p.weights
    if classes is not None:
        classes = np.asarray(classes, dtype=np.int64)
        sig, w = sig[classes], w[classes]
    mismatch = sig != r
    if exact:
        agree_cost = -np.log1p(-(p.flip_probs if classes is None else p.flip_probs[classes]))
        return _ordered_sum(np.where(mismatch, w, agree_cost))
    return 4.0 * _ordered_sum(np.where(mismatch, w, 0.0))


def detect_bernoulli(r, p: BernoulliParams, exact: bool = False):
    R, single = _as_batch(r)
    C, N = p.signatures.shape
    sig_t = np.ascontiguousarray(p.signatures.T)
    w_t = np.ascontiguousarray(p.weights.T)
    agree_t = np.ascontiguousarray(-np.log1p(-p.flip_probs).T) if exact else None
    out = np.empty(R.shape[0], dtype=np.int64)
    for sl in _chunks(R.shape[0], 4 * C):
        Rb = R[sl]
        scores = np.zeros((Rb.shape[0], C))
        # same coordinate order as bernoulli_scores, so values match bitwise
        for i in range(N):
            mismatch = sig_t[i] != Rb[:, i:i + 1]
            if exact:
                scores += np.where(mismatch, w_t[i], agree_t[i])
            else:
                scores += np.where(mismatch, w_t[i], 0.0)
        if not exact:
            scores *= 4.0
        out[sl] = np.argmin(scores, axis=1)
    return _finish(out, single)


# ---------------------------------------------------------------- persistence


_KINDS = {"centroid": CentroidParams, "gaussian": GaussianParams, "bernoulli": BernoulliParams}


def save_params(params, path) -> None:
    kind = next(k for k, cls in _KINDS.items() if isinstance(params, cls))
    np.savez(path, kind=np.array(kind), **vars(params))


def load_params(path):
    with np.load(path) as data:
        cls = _KINDS[str(data["kind"])]
        return cls(**{k: data[k] for k in data.files if k != "kind"})
