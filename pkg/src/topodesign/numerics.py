"""Small dense linear-algebra and random-number kernels.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The SVD is a
one-sided (Hestenes) Jacobi iteration, which is accurate to machine precision
for the small matrices this package works with.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


class NumericError(ArithmeticError):
    """An iterative kernel failed to converge or met non-finite input."""


def _as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"matrix must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    return a


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` by an orthonormal
    completion of the kept columns."""
    rows, cols = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(cols) if keep[j]]
    candidates = iter(np.eye(rows))
    for j in range(cols):
        if keep[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                out[:, j] = v
                basis.append(v)
                break
        else:  # pragma: no cover - cannot happen for cols <= rows
            raise NumericError("could not complete orthonormal basis")
    return out


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = a.shape
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return np.eye(rows, cols), np.zeros(cols), np.eye(cols)
    work = a / scale
    v = np.eye(cols)
    # columns below this norm are numerically zero and left unrotated
    tiny = (np.linalg.norm(work) * 1e-15) ** 2
    for _ in range(MAX_SWEEPS):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                cp, cq = work[:, p], work[:, q]
                alpha = cp @ cp
                beta = cq @ cq
                gamma = cp @ cq
                if alpha <= tiny or beta <= tiny or gamma == 0.0:
                    continue
                if abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                new_p = c * cp - s * cq
                new_q = s * cp + c * cq
                work[:, p], work[:, q] = new_p, new_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")

    sv = np.linalg.norm(work, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    work = work[:, order]
    v = v[:, order]
    keep = sv > sv[0] * 1e-14 if sv[0] > 0 else np.zeros(cols, dtype=bool)
    u = np.zeros_like(work)
    u[:, keep] = work[:, keep] / sv[keep]
    sv = np.where(keep, sv, 0.0) * scale
    if not np.all(keep):
        u = _complete_basis(u, keep)
    return u, sv, v


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin singular value decomposition ``m = U @ diag(s) @ V.T``.

    Returns ``(U, s, V)`` with ``U`` of shape (rows, k), ``V`` of shape
    (cols, k), ``k = min(rows, cols)`` and ``s`` sorted non-increasing.
    """
    a = _as_matrix(m)
    if a.shape[0] >= a.shape[1]:
        return _jacobi_tall(a)
    u, s, v = _jacobi_tall(a.T)
    return v, s, u


def nuclear_norm(m) -> float:
    return float(np.sum(svd(m)[1]))


def svt(m, threshold: float) -> np.ndarray:
    """Singular value soft-thresholding, the proximal map of
    ``threshold * ||X||_*``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    u, s, v = svd(m)
    return (u * np.maximum(s - threshold, 0.0)) @ v.T


def _divided_differences(s: np.ndarray, g: np.ndarray, dg: np.ndarray):
    si, sj = s[:, None], s[None, :]
    gi, gj = g[:, None], g[None, :]
    diff = si - sj
    close = np.abs(diff) <= 1e-12 * max(1.0, float(np.max(s)))
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(close, 0.5 * (dg[:, None] + dg[None, :]), (gi - gj) / np.where(close, 1.0, diff))
        tot = si + sj
        small = tot <= 1e-12 * max(1.0, float(np.max(s)))
        anti = np.where(small, 0.5 * (dg[:, None] + dg[None, :]), (gi + gj) / np.where(small, 1.0, tot))
    return sym, anti


def svt_vjp(m, threshold: float, grad_out) -> np.ndarray:
    """Vector-Jacobian product of :func:`svt` for a square ``m``.

    Uses the divided-difference form of the derivative of a spectral map,
    which stays bounded when singular values coincide.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError("svt_vjp needs a square matrix")
    u, s, v = svd(a)
    g = np.maximum(s - threshold, 0.0)
    dg = (s > threshold).astype(np.float64)
    sym_c, anti_c = _divided_differences(s, g, dg)
    p = u.T @ np.asarray(grad_out, dtype=np.float64) @ v
    sym = 0.5 * (p + p.T)
    anti = 0.5 * (p - p.T)
    return u @ (sym_c * sym + anti_c * anti) @ v.T


def sigmoid(x):
    """Logistic function; saturates without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x):
    out = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def finite_diff_grad(f: Callable[[np.ndarray], float], at, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x.copy())
        x[idx] = orig - h
        fm = f(x.copy())
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


class Rng:
    """Seeded, counter-based random stream (Philox).

    Two instances built from the same seed yield bit-identical draws for the
    same call sequence. :meth:`child` derives independent streams from the
    seed alone, so parallel workers never share state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def child(self, *stream: int) -> "Rng":
        mixed = np.random.SeedSequence([self.seed, *[int(s) & 0xFFFFFFFF for s in stream]])
        return Rng(int(mixed.generate_state(1, np.uint64)[0]))

    def uniform(self, size=None):
        """Draws from [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        """Standard normal draws via the Box-Muller transform."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]
