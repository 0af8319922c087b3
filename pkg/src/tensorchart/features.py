"""Covariance-tensor features, Tucker denoising and SCM dissimilarities."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .channel import ConfigError, InvalidInputError
from .tensor import InvalidRankError, hosvd, tucker_reconstruct, unfold

DIRECT = "direct"
GEODESIC = "geodesic"

DEFAULT_RANKS = (8, 8, 8)
DEFAULT_GEODESIC_K = 10


@dataclass
class CovTensor:
    data: np.ndarray  # (n_rx, n_rx, n_groups) complex
    group_counts: np.ndarray  # observed subcarriers per group

    @property
    def shape(self):
        return self.data.shape


@dataclass
class DissimilarityMatrix:
    values: np.ndarray
    kind: str = DIRECT

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInputError("dissimilarity matrix must be square")
        if self.kind not in (DIRECT, GEODESIC):
            raise InvalidInputError(f"unknown dissimilarity kind {self.kind!r}")
        self.values = v

    def __len__(self) -> int:
        return self.values.shape[0]


def subband_groups(n_sub: int, h_p: int) -> list[np.ndarray]:
    """Zero-based strided groups: group i holds ``i, i + g, ..., i + (h_p-1) g``
    with ``g = n_sub / h_p``."""
    if h_p < 1 or n_sub % h_p:
        raise ConfigError(f"h_p={h_p} does not divide n_sub={n_sub}")
    g = n_sub // h_p
    return [i + g * np.arange(h_p) for i in range(g)]


def _observed(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[-1],):
        raise InvalidInputError(f"mask of shape {mask.shape} does not match {x.shape[-1]} subcarriers")
    return mask


def spatial_cov_tensor(x: np.ndarray, mask=None, h_p: int = 17) -> CovTensor:
    """Stack of per-subband spatial covariance matrices.

    Slice i is ``H_i H_i^H / (n_pol n_tx m_i)`` where ``H_i`` is the mode-1
    unfolding of the channel restricted to the observed members of group i.
    A group with no observed member gets the mean of the other slices and a
    count of zero.
    """
    if x.ndim != 4:
        raise InvalidInputError(f"expected a 4-mode channel tensor, got shape {x.shape}")
    n_rx, n_pol, n_tx, n_sub = x.shape
    mask = _observed(x, mask)
    groups = np.stack(subband_groups(n_sub, h_p), axis=1)  # (h_p, n_groups)
    counts = mask[groups].sum(axis=0).astype(np.int64)
    # unobserved entries may hold NaN; zero them instead of weighting them
    sub = np.where(mask[groups], x[..., groups], 0.0)  # (rx, pol, tx, h_p, n_groups)
    data = np.einsum("apthg,bpthg->abg", sub, sub.conj(), optimize=True)
    filled = counts > 0
    if not np.any(filled):
        raise InvalidInputError("no observed subcarriers")
    data[..., filled] /= (n_pol * n_tx * counts[filled])[None, None, :]
    if not np.all(filled):
        data[..., ~filled] = data[..., filled].mean(axis=2, keepdims=True)
    return CovTensor(data=data, group_counts=counts)


def tucker_denoise(t, ranks=DEFAULT_RANKS) -> tuple[np.ndarray, np.ndarray]:
    """Truncated-HOSVD reconstruction of the covariance tensor, split into
    real and imaginary parts."""
    data = t.data if isinstance(t, CovTensor) else np.asarray(t)
    try:
        recon = tucker_reconstruct(hosvd(data, ranks))
    except InvalidRankError as exc:
        raise ConfigError(str(exc)) from exc
    return np.ascontiguousarray(recon.real), np.ascontiguousarray(recon.imag)


def overall_scm(x: np.ndarray, mask=None) -> np.ndarray:
    """Spatial covariance over every observed subcarrier."""
    mask = _observed(x, mask)
    m = int(mask.sum())
    if m == 0:
        raise InvalidInputError("no observed subcarriers")
    h = unfold(x[..., mask], 1)
    return h @ h.conj().T / (x.shape[1] * x.shape[2] * m)


def featurize(x: np.ndarray, mask=None, h_p: int = 17, ranks=DEFAULT_RANKS, normalize: bool = True):
    """Network input ``(re, im)`` plus the overall SCM for one channel.

    With ``normalize`` the denoised tensor is rescaled to unit mean squared
    entry, which removes the path-loss scale the dissimilarity ignores anyway.
    """
    cov = spatial_cov_tensor(x, mask, h_p)
    re, im = tucker_denoise(cov, ranks)
    if normalize:
        rms = np.sqrt((np.sum(re * re) + np.sum(im * im)) / re.size)
        if rms > 0:
            re, im = re / rms, im / rms
    return re, im, overall_scm(x, mask)


def scm_dissimilarity(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - tr(a^H b) / (|a|_F |b|_F)`` for Hermitian PSD inputs."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInputError("zero-norm covariance")
    d = 1.0 - np.vdot(a, b).real / (na * nb)
    return 0.0 if -1e-12 < d < 0 else float(d)


def pairwise_scm_dissimilarity(scms) -> DissimilarityMatrix:
    """All-pairs :func:`scm_dissimilarity` for a stack of covariance matrices."""
    v = np.asarray(scms).reshape(len(scms), -1)
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise InvalidInputError("zero-norm covariance")
    v = v / norms[:, None]
    d = 1.0 - (v.conj() @ v.T).real
    d = 0.5 * (d + d.T)
    d[(d > -1e-12) & (d < 0)] = 0.0
    np.fill_diagonal(d, 0.0)
    return DissimilarityMatrix(d, DIRECT)


def knn_graph(d: np.ndarray, k: int) -> list[dict[int, float]]:
    """Symmetrized k-nearest-neighbor adjacency (ties broken by index)."""
    n = d.shape[0]
    adj: list[dict[int, float]] = [{} for _ in range(n)]
    for i in range(n):
        row = d[i].copy()
        row[i] = np.inf
        for j in np.argsort(row, kind="stable")[:k]:
            j = int(j)
            w = float(d[i, j])
            adj[i][j] = w
            adj[j][i] = w
    return adj


def _components(adj) -> np.ndarray:
    n = len(adj)
    label = np.full(n, -1, dtype=np.int64)
    c = 0
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = c
        stack = [s]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if label[v] < 0:
                    label[v] = c
                    stack.append(v)
        c += 1
    return label


def connect_components(adj, d: np.ndarray) -> int:
    """Add the cheapest inter-component edge until the graph is connected.

    Returns the number of edges added.
    """
    added = 0
    while True:
        label = _components(adj)
        if label.max() == 0:
            return added
        cross = np.where(label[:, None] != label[None, :], d, np.inf)
        i, j = np.unravel_index(np.argmin(cross), cross.shape)
        w = float(d[i, j])
        adj[i][j] = w
        adj[j][i] = w
        added += 1


def dijkstra(adj, source: int) -> np.ndarray:
    dist = np.full(len(adj), np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(len(adj), dtype=bool)
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u].items():
            nd = du + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def all_pairs_shortest_paths(adj) -> np.ndarray:
    return np.stack([dijkstra(adj, s) for s in range(len(adj))])


def snap_weights(values: np.ndarray) -> np.ndarray:
    """Round weights to a power-of-two grid on which any path sum is exact.

    With quantum ``q`` chosen so that ``N * max(w) <= 2**52 q``, every sum of
    at most N weights is an integer multiple of ``q`` below ``2**52 q`` and
    so exactly representable. Shortest paths then obey the triangle
    inequality and symmetry bit for bit. The relative rounding is about
    ``N * 1e-16``.
    """
    top = float(np.max(values, initial=0.0))
    if top <= 0:
        return values.copy()
    q = 2.0 ** (np.ceil(np.log2(top * values.shape[0])) - 52)
    return np.round(values / q) * q


def geodesic_dissimilarity(d, k: int = DEFAULT_GEODESIC_K) -> DissimilarityMatrix:
    """Shortest-path distances over the symmetric kNN graph of ``d``."""
    values = d.values if isinstance(d, DissimilarityMatrix) else np.asarray(d, dtype=float)
    n = values.shape[0]
    if not 1 <= k < n:
        raise ConfigError(f"k={k} must lie in [1, {n - 1}]")
    values = snap_weights(values)
    adj = knn_graph(values, k)
    connect_components(adj, values)
    return DissimilarityMatrix(all_pairs_shortest_paths(adj), GEODESIC)
