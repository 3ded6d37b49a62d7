"""PCA (via one-sided Jacobi SVD) and k-means with medoid lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError


@dataclass
class PCAModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows, descending variance
    explained_variance: np.ndarray  # (k,)
    degenerate: bool = False  # True when rank < k and trailing rows were completed

    @property
    def k(self) -> int:
        return self.components.shape[0]


def jacobi_svd(a: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Thin SVD of ``a`` (n x d, n >= d) by one-sided Jacobi rotations.

    Columns of a working copy are orthogonalised pairwise; at convergence the
    column norms are the singular values and the accumulated rotations the
    right singular vectors.  Returns ``(s, vt)`` sorted by descending ``s``.
    """
    u = np.array(a, dtype=np.float64, copy=True)
    d = u.shape[1]
    v = np.eye(d)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(d - 1):
            for j in range(i + 1, d):
                ui, uj = u[:, i], u[:, j]
                alpha = ui @ ui
                beta = uj @ uj
                gamma = ui @ uj
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    zeta = (beta - alpha) / (2.0 * gamma)
                if not np.isfinite(zeta):
                    continue  # coupling negligible against the norm gap
                rotated = True
                if zeta == 0.0:
                    t = 1.0
                elif abs(zeta) > 1e150:
                    t = 0.5 / zeta  # asymptotic form; zeta**2 would overflow
                else:
                    t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ui - s * uj
                u[:, j] = s * ui + c * uj
                u[:, i] = new_i
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break
    sv = np.linalg.norm(u, axis=0)
    order = np.argsort(-sv, kind="stable")
    return sv[order], v[:, order].T


def _right_singular(x: np.ndarray):
    """Right singular vectors / values of x (n x d) working on the smaller side."""
    n, d = x.shape
    if n >= d:
        # R from a QR factorisation shares x's right singular vectors.
        r = np.linalg.qr(x, mode="r") if n > d else x
        return jacobi_svd(r)
    # Fewer rows than columns: decompose x^T (d x n); its left vectors are ours.
    s, vt_small = jacobi_svd(x.T)
    # x^T = U S V^T  =>  right singular vectors of x are U = x^T V / S
    vt = np.zeros((n, d))
    nz = s > s.max(initial=0.0) * 1e-12
    vt[nz] = ((x.T @ vt_small[nz].T) / s[nz]).T
    return s, vt


def _orthonormal_completion(rows: np.ndarray, k: int, d: int) -> np.ndarray:
    basis = list(rows)
    for e in np.eye(d):
        if len(basis) >= k:
            break
        v = e - sum((b @ e) * b for b in basis) if basis else e.copy()
        for b in basis:  # second Gram-Schmidt pass for stability
            v = v - (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    return np.array(basis[:k])


def fit_pca(x: np.ndarray, k: int) -> PCAModel:
    """Top-``k`` principal directions of the row-centred data ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"fit_pca expects a 2-D matrix, got {x.shape}")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise ContractError(f"fit_pca: k={k} outside [1, min(n, d)={min(n, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    s, vt = _right_singular(xc)
    var = s**2 / max(n - 1, 1)
    scale = s.max(initial=0.0)
    rank = int(np.sum(s > max(scale, 1e-300) * 1e-10)) if scale > 0 else 0
    degenerate = rank < k
    comps = vt[: min(rank, k)]
    if degenerate:
        comps = _orthonormal_completion(comps, k, d)
        var = np.concatenate([var[:rank], np.zeros(k - rank)])
    # Deterministic sign: largest-magnitude entry of each direction is positive.
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), idx])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    return PCAModel(mean, comps, var[:k].copy(), degenerate)


def project(x: np.ndarray, model: PCAModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ShapeError(f"project: data dim {x.shape[-1]} vs model dim {model.mean.shape[0]}")
    return (x - model.mean) @ model.components.T


def reconstruct(coeffs: np.ndarray, model: PCAModel) -> np.ndarray:
    return coeffs @ model.components + model.mean


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    medoid_indices: np.ndarray
    inertia: float
    inertia_trace: list[float]
    iterations: int


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded at the point farthest from its current
    centroid.  ``medoid_indices[i]`` is the member of cluster ``i`` nearest its
    centroid, so medoids are distinct.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"kmeans: k={k} outside [1, n={n}]")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    first = rng.integers(n)
    centroids[0] = x[first]
    closest = _sq_dists(x, centroids[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            pick = rng.integers(n)
        else:
            pick = rng.choice(n, p=closest / total)
        centroids[i] = x[pick]
        closest = np.minimum(closest, _sq_dists(x, centroids[i : i + 1])[:, 0])

    assignment = np.full(n, -1)
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        new_assign = d.argmin(axis=1)
        trace.append(float(d[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignment):
            break
        assignment = new_assign
        for c in range(k):
            members = assignment == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                dist_own = d[np.arange(n), assignment]
                far = int(np.argmax(dist_own))
                centroids[c] = x[far]
                assignment[far] = c
                d[far] = 0.0
    d = _sq_dists(x, centroids)
    inertia = float(d[np.arange(n), assignment].sum())
    medoids = np.empty(k, dtype=np.int64)
    for c in range(k):
        members = np.flatnonzero(assignment == c)
        if members.size == 0:
            members = np.arange(n)
        medoids[c] = members[np.argmin(d[members, c])]
    return KMeansResult(centroids, assignment, medoids, inertia, trace, it)
