"""Forward operators ``A``, adjoints, norm estimates and measurement simulation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "NORM_SAFETY",
    "LinearOp",
    "Measurement",
    "RadonGeometry",
    "dense_op",
    "identity_op",
    "diag_op",
    "convolution_op",
    "build_radon",
    "op_norm",
    "simulate",
    "pseudo_inverse_init",
    "RidgeSolver",
    "matrixize",
]

# multiply estimated ||A|| by this before it enters a step-size rule
NORM_SAFETY = 1.01


@dataclass(frozen=True)
class LinearOp:
    """A linear map R^d -> R^m with its adjoint.

    ``matrix`` is kept when the operator is stored explicitly (dense or
    sparse); implicit operators leave it ``None``.
    """

    in_dim: int
    out_dim: int
    apply_fn: Callable[[np.ndarray], np.ndarray]
    adjoint_fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "dense"
    matrix: object = None

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"apply: expected shape ({self.in_dim},), got {x.shape}")
        return self.apply_fn(x)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.out_dim,):
            raise ValueError(f"adjoint: expected shape ({self.out_dim},), got {y.shape}")
        return self.adjoint_fn(y)

    def normal(self, x):
        """``A^T A x``."""
        return self.adjoint(self.apply(x))

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    sigma: float
    op: LinearOp

    def __post_init__(self):
        if self.y.shape != (self.op.out_dim,):
            raise ValueError("measurement length does not match operator output dimension")


@dataclass(frozen=True)
class RadonGeometry:
    """Parallel-beam geometry on an ``n x n`` image.

    Angles are spread uniformly over [0, 180) degrees; a positive
    ``missing_wedge`` drops the views in [180 - wedge, 180).
    """

    n: int
    num_angles: int
    rays_per_angle: int | None = None
    missing_wedge: float = 0.0

    def __post_init__(self):
        if self.num_angles < 1:
            raise ValueError("num_angles must be >= 1")
        if not 0.0 <= self.missing_wedge < 180.0:
            raise ValueError("missing_wedge must lie in [0, 180)")
        if self.n < 1:
            raise ValueError("image side must be >= 1")

    @property
    def rays(self) -> int:
        if self.rays_per_angle is not None:
            return self.rays_per_angle
        return int(math.ceil(self.n * math.sqrt(2.0)))

    def angles(self) -> np.ndarray:
        """View angles in degrees."""
        full = np.arange(self.num_angles) * (180.0 / self.num_angles)
        return full[full < 180.0 - self.missing_wedge - 1e-9]


def dense_op(M) -> LinearOp:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("dense operator needs a 2-D matrix")
    return LinearOp(M.shape[1], M.shape[0], lambda x: M @ x, lambda y: M.T @ y, "dense", M)


def identity_op(d: int) -> LinearOp:
    return LinearOp(d, d, lambda x: x.copy(), lambda y: y.copy(), "identity")


def diag_op(diag) -> LinearOp:
    w = np.asarray(diag, dtype=np.float64)
    return LinearOp(w.size, w.size, lambda x: w * x, lambda y: w * y, "dense", np.diag(w))


def convolution_op(kernel, shape) -> LinearOp:
    """Circular 2-D convolution on images of ``shape``; adjoint is correlation."""
    shape = tuple(shape)
    k = np.zeros(shape)
    kern = np.asarray(kernel, dtype=np.float64)
    kh, kw = kern.shape
    k[:kh, :kw] = kern
    k = np.roll(k, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    K = np.fft.rfft2(k)
    d = shape[0] * shape[1]

    def fwd(x):
        return np.fft.irfft2(np.fft.rfft2(x.reshape(shape)) * K, s=shape).ravel()

    def adj(y):
        return np.fft.irfft2(np.fft.rfft2(y.reshape(shape)) * np.conj(K), s=shape).ravel()

    return LinearOp(d, d, fwd, adj, "convolution")


def _ray_row(n, theta, s, half_len):
    """Intersection lengths of one ray with the pixel grid.

    The ray is ``{p : <p, (cos t, sin t)> = s}``; pixel ``(i, j)`` covers
    ``x in [j - n/2, j + 1 - n/2]``, ``y in [n/2 - i - 1, n/2 - i]``.
    Segments between consecutive grid-line crossings are assigned to the
    pixel containing the segment midpoint.
    """
    c, si = math.cos(theta), math.sin(theta)
    p0 = np.array([s * c, s * si])
    dvec = np.array([-si, c])
    h = n / 2.0
    # clip parameter range to the image box
    lo, hi = -half_len, half_len
    for k in range(2):
        if abs(dvec[k]) < 1e-15:
            if not (-h < p0[k] < h):
                return np.empty(0, dtype=np.int64), np.empty(0)
            continue
        t1 = (-h - p0[k]) / dvec[k]
        t2 = (h - p0[k]) / dvec[k]
        lo = max(lo, min(t1, t2))
        hi = min(hi, max(t1, t2))
    if hi - lo <= 1e-12:
        return np.empty(0, dtype=np.int64), np.empty(0)
    ts = [np.array([lo, hi])]
    grid = np.arange(-h, h + 0.5)
    for k in range(2):
        if abs(dvec[k]) > 1e-15:
            t = (grid - p0[k]) / dvec[k]
            ts.append(t[(t > lo) & (t < hi)])
    t = np.unique(np.concatenate(ts))
    seg = np.diff(t)
    keep = seg > 1e-12
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    px = p0[0] + mid * dvec[0]
    py = p0[1] + mid * dvec[1]
    j = np.clip(np.floor(px + h).astype(np.int64), 0, n - 1)
    i = np.clip(np.floor(h - py).astype(np.int64), 0, n - 1)
    return i * n + j, seg


def build_radon(geom: RadonGeometry) -> LinearOp:
    """Sparse parallel-beam projector with exact-transpose adjoint."""
    n = geom.n
    if n > 128:
        raise ValueError("build_radon is limited to n <= 128")
    angles = geom.angles()
    R = geom.rays
    if angles.size == 0 or R < 1:
        raise ValueError("geometry produces zero rays")
    diag = n * math.sqrt(2.0)
    spacing = diag / R
    offsets = (np.arange(R) + 0.5) * spacing - diag / 2.0
    rows, cols, vals = [], [], []
    r = 0
    for ang in angles:
        th = math.radians(ang)
        for s in offsets:
            idx, seg = _ray_row(n, th, s, diag)
            rows.append(np.full(idx.size, r, dtype=np.int64))
            cols.append(idx)
            vals.append(seg)
            r += 1
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r, n * n),
    )
    M.sum_duplicates()
    if M.nnz == 0:
        raise ValueError("geometry produces zero rays")
    MT = M.T.tocsr()
    return LinearOp(n * n, r, lambda x: M @ x, lambda y: MT @ y, "radon", M)


def op_norm(A: LinearOp, iters: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm ``||A||_2``.

    Returns the square root of the final Rayleigh quotient of ``A^T A``.
    Callers forming step sizes should multiply by :data:`NORM_SAFETY`.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.in_dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.normal(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return math.sqrt(max(lam, 0.0))


def simulate(A: LinearOp, x, sigma: float, seed) -> Measurement:
    """``y = A x + sigma * g`` with ``g`` standard normal from a seeded generator."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = A.apply(x)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(y.shape)
    return Measurement(y, float(sigma), A)


def _cg(apply, b, x0, tol, maxiter):
    x = x0.copy()
    r = b - apply(x)
    p = r.copy()
    rs = r @ r
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), True
    for _ in range(maxiter):
        if math.sqrt(rs) <= tol * bnorm:
            return x, True
        Ap = apply(p)
        a = rs / (p @ Ap)
        x += a * p
        r -= a * Ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, math.sqrt(rs) <= tol * bnorm


def pseudo_inverse_init(A: LinearOp, y, ridge: float, tol: float = 1e-8,
                        maxiter: int | None = None, return_info: bool = False):
    """Solve ``(A^T A + ridge I) x = A^T y`` by conjugate gradients.

    Stops at relative residual ``tol``. On non-convergence the last iterate
    is returned and a :class:`RuntimeWarning` is issued; with
    ``return_info=True`` a convergence flag is returned alongside.
    """
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    y = np.asarray(y, dtype=np.float64)
    b = A.adjoint(y)
    maxiter = maxiter or 10 * A.in_dim + 100
    x, ok = _cg(lambda v: A.normal(v) + ridge * v, b, np.zeros(A.in_dim), tol, maxiter)
    if not ok:
        warnings.warn("pseudo_inverse_init: CG did not converge", RuntimeWarning, stacklevel=2)
    return (x, ok) if return_info else x


class RidgeSolver:
    """Repeated ``(A^T A + ridge I)^-1 A^T y`` solves for one operator.

    Small explicit operators are Cholesky-factored once; anything else
    falls back to :func:`pseudo_inverse_init`.
    """

    def __init__(self, A: LinearOp, ridge: float, max_dense: int = 4096):
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        self.A, self.ridge = A, ridge
        self._factor = None
        M = A.matrix
        if M is not None and A.in_dim <= max_dense:
            from scipy.linalg import cho_factor

            Md = M.toarray() if sp.issparse(M) else np.asarray(M)
            self._factor = cho_factor(Md.T @ Md + ridge * np.eye(A.in_dim))

    def __call__(self, y) -> np.ndarray:
        if self._factor is None:
            return pseudo_inverse_init(self.A, y, self.ridge)
        from scipy.linalg import cho_solve

        return cho_solve(self._factor, self.A.adjoint(np.asarray(y, dtype=np.float64)))


def matrixize(A: LinearOp) -> np.ndarray:
    """Dense matrix of ``A`` by applying it to the standard basis."""
    eye = np.eye(A.in_dim)
    return np.column_stack([A.apply(e) for e in eye])
