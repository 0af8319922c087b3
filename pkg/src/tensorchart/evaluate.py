"""Chart quality metrics, affine alignment and the Isomap (classical MDS) baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ConfigError, InvalidInputError
from .features import GEODESIC, DissimilarityMatrix


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class MetricReport:
    ct: float
    tw: float
    ks: float
    neighborhood_k: int


@dataclass
class AffineTransform:
    matrix: np.ndarray  # (2, 2)
    offset: np.ndarray  # (2,)

    def apply(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.matrix.T + self.offset


@dataclass
class MdsResult:
    points: np.ndarray
    eigenvalues: np.ndarray
    negative_mass: float  # share of |eigenvalue| mass on negative eigenvalues
    iterations: tuple[int, ...]


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    sq = np.sum(p * p, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * p @ p.T
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return d


def _as_distances(x) -> np.ndarray:
    if isinstance(x, DissimilarityMatrix):
        return x.values
    return pairwise_distances(x)


def default_k(n: int) -> int:
    return max(1, int(0.05 * n))


TIE_RESOLUTION = 1e-10


def neighbor_ranks(d: np.ndarray) -> np.ndarray:
    """``ranks[i, j]`` = position of j in i's neighbor list (self is 0, ties by index).

    Distances are compared on a grid of ``TIE_RESOLUTION`` times the largest
    distance, so values equal up to rounding noise count as ties.
    """
    d = np.array(d, dtype=float, copy=True)
    n = d.shape[0]
    top = np.max(np.abs(d), initial=0.0)
    if top > 0:
        d = np.round(d / (top * TIE_RESOLUTION))
    np.fill_diagonal(d, -np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(n)[None, :]
    return ranks


def _intrusion_score(ref: np.ndarray, emb: np.ndarray, k: int) -> float:
    # Penalize points that are k-neighbors in `emb` but not in `ref`,
    # by how far beyond k they rank in `ref`.
    n = ref.shape[0]
    if not 1 <= k < n / 2:
        raise ConfigError(f"neighborhood k={k} must satisfy 1 <= k < N/2 (N={n})")
    r_ref = neighbor_ranks(ref)
    r_emb = neighbor_ranks(emb)
    intruders = (r_emb >= 1) & (r_emb <= k) & (r_ref > k)
    penalty = np.sum((r_ref - k)[intruders])
    return 1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty


def trustworthiness(d_high, z, k: int | None = None) -> float:
    """Rank-based score in [0, 1]; 1 means no chart neighbor is a false neighbor.

    ``d_high`` is a dissimilarity matrix (or points); ``z`` is an (N, D) chart
    or a :class:`DissimilarityMatrix` of chart distances.
    """
    ref = _as_distances(d_high)
    emb = _as_distances(z)
    _check_pair(ref, emb)
    return _intrusion_score(ref, emb, default_k(ref.shape[0]) if k is None else k)


def continuity(d_high, z, k: int | None = None) -> float:
    """Dual of :func:`trustworthiness`: penalizes original neighbors pushed out of the chart neighborhood."""
    ref = _as_distances(d_high)
    emb = _as_distances(z)
    _check_pair(ref, emb)
    return _intrusion_score(emb, ref, default_k(ref.shape[0]) if k is None else k)


def kruskal_stress(d_high, z) -> float:
    """Stress after the optimal global rescaling of the chart distances."""
    ref = _as_distances(d_high)
    emb = _as_distances(z)
    _check_pair(ref, emb)
    return _stress(ref, emb)


def _stress(ref: np.ndarray, emb: np.ndarray) -> float:
    if ref.shape[0] < 2:
        raise InvalidInputError("need at least two points")
    iu = np.triu_indices(ref.shape[0], 1)
    d = ref[iu]
    e = emb[iu]
    dd = np.dot(d, d)
    if dd == 0:
        raise InvalidInputError("all reference dissimilarities are zero")
    ee = np.dot(e, e)
    beta = np.dot(d, e) / ee if ee > 0 else 0.0
    r = d - beta * e
    return float(np.sqrt(np.dot(r, r) / dd))


def _check_pair(ref, emb):
    if ref.shape != emb.shape:
        raise InvalidInputError(f"{ref.shape[0]} reference points vs {emb.shape[0]} chart points")


def evaluate_chart(d_high, z, k: int | None = None) -> MetricReport:
    ref = _as_distances(d_high)
    emb = _as_distances(z)
    _check_pair(ref, emb)
    k = default_k(ref.shape[0]) if k is None else k
    return MetricReport(
        ct=_intrusion_score(emb, ref, k),
        tw=_intrusion_score(ref, emb, k),
        ks=_stress(ref, emb),
        neighborhood_k=k,
    )


def optimal_affine(z: np.ndarray, p: np.ndarray) -> tuple[AffineTransform, np.ndarray]:
    """Least-squares ``A z + b ~ p`` via the normal equations."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    if z.shape[0] != p.shape[0] or z.shape[0] < 3:
        raise InvalidInputError("need matching point sets with N >= 3")
    if np.linalg.matrix_rank(p - p.mean(axis=0)) < 2:
        raise DegenerateGeometryError("ground-truth positions are collinear")
    design = np.column_stack([z, np.ones(len(z))])
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise DegenerateGeometryError("chart points are collinear")
    theta = np.linalg.solve(gram, design.T @ p)  # (3, 2)
    t = AffineTransform(matrix=theta[:2].T.copy(), offset=theta[2].copy())
    return t, t.apply(z)


def _power_iteration(b: np.ndarray, rng: np.random.Generator, tol: float, max_iter: int):
    v = rng.standard_normal(b.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = b @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, v, it
        w /= nw
        # sign-insensitive change for negative dominant eigenvalues
        change = min(np.linalg.norm(w - v), np.linalg.norm(w + v))
        v = w
        if change < tol and abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            return float(v @ b @ v), v, it
        lam = lam_new
    return float(v @ b @ v), v, max_iter


def classical_mds(d: np.ndarray, dim: int = 2, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> MdsResult:
    """Top-``dim`` eigenpairs of the double-centered ``-d^2 / 2`` by power
    iteration with deflation."""
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (d * d) @ j
    b = 0.5 * (b + b.T)
    rng = np.random.default_rng(seed)
    work = b.copy()
    vals, vecs, iters = [], [], []
    for _ in range(dim):
        lam, v, it = _power_iteration(work, rng, tol, max_iter)
        if lam < 0:
            # dominant eigenvalue is negative: shift so the top positive one dominates
            shifted = work - lam * np.eye(n)
            mu, v, it2 = _power_iteration(shifted, rng, tol, max_iter)
            lam = mu + lam
            it += it2
        vals.append(lam)
        vecs.append(v)
        iters.append(it)
        work = work - lam * np.outer(v, v)
    vals = np.array(vals)
    vecs = np.column_stack(vecs)
    # deterministic orientation: largest-magnitude coordinate positive
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(dim)])
    points = vecs * np.sqrt(np.maximum(vals, 0.0))
    spectrum = np.linalg.eigvalsh(b)
    total = np.sum(np.abs(spectrum))
    neg = float(-np.sum(spectrum[spectrum < 0]) / total) if total > 0 else 0.0
    return MdsResult(points=points, eigenvalues=vals, negative_mass=neg, iterations=tuple(iters))


def isomap_baseline(d_geo: DissimilarityMatrix, dim: int = 2) -> MdsResult:
    """Classical MDS on a geodesic dissimilarity matrix."""
    if not isinstance(d_geo, DissimilarityMatrix) or d_geo.kind != GEODESIC:
        raise ConfigError("isomap baseline needs a geodesic dissimilarity matrix")
    return classical_mds(d_geo.values, dim)
