"""Dense tensor algebra: unfoldings, mode products, truncated HOSVD.

Tensors are plain numpy arrays. The flat layout used for serialization and
vectorization is first-mode-fastest (Fortran order). Modes are numbered from
1, following the usual multilinear-algebra notation.

The mode-n unfolding of a tensor of shape (I_1, ..., I_L) is the matrix of
shape (I_n, prod_{m != n} I_m) whose columns enumerate the remaining modes in
increasing index order with the earliest remaining mode varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidModeError",
    "InvalidRankError",
    "ShapeError",
    "TuckerFactors",
    "vec",
    "from_vec",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "hermitian_eig",
    "hosvd",
    "tucker_reconstruct",
]


class ShapeError(ValueError):
    pass


class InvalidModeError(ValueError):
    pass


class InvalidRankError(ValueError):
    pass


@dataclass(frozen=True)
class TuckerFactors:
    """Core tensor plus one factor matrix per mode (factor n is I_n x R_n)."""

    core: np.ndarray
    factors: tuple[np.ndarray, ...]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(self.core.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)


def vec(x: np.ndarray) -> np.ndarray:
    """Flatten in first-mode-fastest order."""
    return np.ravel(x, order="F")


def from_vec(data: np.ndarray, shape) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    data = np.asarray(data)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"{data.size} values cannot fill shape {shape}")
    return np.reshape(data, shape, order="F")


def _check_mode(x: np.ndarray, mode: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 1 <= mode <= x.ndim:
        raise InvalidModeError(f"mode {mode!r} out of range for order-{x.ndim} tensor")
    return int(mode) - 1


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding; the result is a copy, not a view."""
    axis = _check_mode(x, mode)
    moved = np.moveaxis(x, axis, 0)
    return np.reshape(moved, (x.shape[axis], -1), order="F")


def fold(matrix: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of the given shape."""
    shape = tuple(int(s) for s in shape)
    if not 1 <= mode <= len(shape):
        raise InvalidModeError(f"mode {mode!r} out of range for order-{len(shape)} tensor")
    axis = mode - 1
    rest = shape[:axis] + shape[axis + 1 :]
    if matrix.shape != (shape[axis], int(np.prod(rest, dtype=np.int64))):
        raise ShapeError(f"matrix of shape {matrix.shape} does not unfold {shape} at mode {mode}")
    moved = np.reshape(matrix, (shape[axis],) + rest, order="F")
    return np.moveaxis(moved, 0, axis)


def mode_product(x: np.ndarray, b: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n product ``x ×_n b``: contracts mode n of x with the columns of b.

    ``out[i_1, .., j, .., i_L] = sum_k x[i_1, .., k, .., i_L] * b[j, k]``
    """
    axis = _check_mode(x, mode)
    b = np.asarray(b)
    if b.ndim != 2 or b.shape[1] != x.shape[axis]:
        raise ShapeError(
            f"matrix of shape {b.shape} cannot contract mode {mode} of size {x.shape[axis]}"
        )
    out = np.tensordot(b, x, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def multi_mode_product(x: np.ndarray, matrices, modes=None) -> np.ndarray:
    """Apply ``x ×_{m1} B1 ×_{m2} B2 ...``; ``modes`` defaults to 1..len(matrices)."""
    if modes is None:
        modes = range(1, len(matrices) + 1)
    for b, m in zip(matrices, modes):
        x = mode_product(x, b, m)
    return x


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    # Make the largest-magnitude entry of each column real and positive;
    # argmax keeps the first index on ties.
    idx = np.argmax(np.abs(vectors), axis=0)
    pivot = vectors[idx, np.arange(vectors.shape[1])]
    phase = np.where(np.abs(pivot) > 0, pivot / np.where(pivot == 0, 1, np.abs(pivot)), 1)
    return vectors / phase


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament: every pair (p, q) appears exactly once per
    # sweep, in rounds of disjoint pairs. Odd n gets a dummy player.
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def hermitian_eig(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigendecomposition of a Hermitian matrix by Jacobi rotations.

    Sweeps visit every off-diagonal pair once, grouped into rounds of
    disjoint pairs whose rotations are applied together. Iteration stops once
    the off-diagonal Frobenius norm drops below ``tol * ||a||_F`` or after
    ``max_sweeps`` sweeps.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in decreasing
    order (ties keep the diagonal order left by the sweeps) and each
    eigenvector scaled so its largest-magnitude entry is real positive.
    """
    a = np.array(a, dtype=np.result_type(a, np.float64), copy=True)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.conj().T)
    v = np.eye(n, dtype=a.dtype)
    scale = np.linalg.norm(a)
    if n >= 2 and scale > 0.0:
        threshold = tol * scale
        rounds = _round_robin(n)
        for _ in range(max_sweeps):
            if np.linalg.norm(a - np.diag(np.diagonal(a))) <= threshold:
                break
            for p, q in rounds:
                _rotate(a, v, p, q)
    w = np.real(np.diagonal(a)).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], _fix_phase(v[:, order])


def _rotate(a: np.ndarray, v: np.ndarray, p: np.ndarray, q: np.ndarray) -> None:
    b = a[p, q]
    mag = np.abs(b)
    live = mag > np.finfo(np.float64).tiny
    if not np.any(live):
        return
    p, q, b, mag = p[live], q[live], b[live], mag[live]
    app = a[p, p].real
    aqq = a[q, q].real
    theta = (aqq - app) / (2.0 * mag)
    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    # e removes the phase of a[p, q] so the 2x2 problem becomes real symmetric
    e = np.conj(b) / mag
    for m in (a, v):
        cp, cq = m[:, p], m[:, q]
        m[:, p] = cp * c - cq * (s * e)
        m[:, q] = cp * s + cq * (c * e)
    rp, rq = a[p, :], a[q, :]
    a[p, :] = c[:, None] * rp - (s * np.conj(e))[:, None] * rq
    a[q, :] = s[:, None] * rp + (c * np.conj(e))[:, None] * rq
    a[p, q] = 0.0
    a[q, p] = 0.0


def hosvd(x: np.ndarray, ranks) -> TuckerFactors:
    """Truncated higher-order SVD.

    Factor n holds the leading ``ranks[n]`` left singular vectors of the
    mode-n unfolding (eigenvectors of its Gram matrix); the core is the
    projection ``x ×_1 U_1^H ... ×_L U_L^H``.
    """
    x = np.asarray(x)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != x.ndim:
        raise InvalidRankError(f"need {x.ndim} ranks, got {len(ranks)}")
    for n, (r, size) in enumerate(zip(ranks, x.shape), start=1):
        if not 1 <= r <= size:
            raise InvalidRankError(f"rank {r} invalid for mode {n} of size {size}")
    factors = []
    for n, r in enumerate(ranks, start=1):
        m = unfold(x, n)
        _, vecs = hermitian_eig(m @ m.conj().T)
        factors.append(vecs[:, :r])
    core = multi_mode_product(x, [u.conj().T for u in factors])
    return TuckerFactors(core=core, factors=tuple(factors))


def tucker_reconstruct(t: TuckerFactors) -> np.ndarray:
    """Expand ``core ×_1 U_1 ... ×_L U_L``."""
    core = np.asarray(t.core)
    if len(t.factors) != core.ndim:
        raise ShapeError(f"{len(t.factors)} factors for an order-{core.ndim} core")
    for n, (u, r) in enumerate(zip(t.factors, core.shape), start=1):
        if u.ndim != 2 or u.shape[1] != r:
            raise ShapeError(f"factor {n} of shape {u.shape} does not match core mode size {r}")
    return multi_mode_product(core, t.factors)
