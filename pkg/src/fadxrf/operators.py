"""Spatial difference operators, proximal maps and the FFT circulant solve.

Maps are stored as stacks of shape (K, H, W). Differences are periodic, so
``D^T D`` is diagonalised by the 2-D DFT.
"""
from __future__ import annotations

import numpy as np
import scipy.fft
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from ._threads import max_workers
from .core import ALPHA_LINE
from .exceptions import DimensionError


def _shift_diff(u, axis, shift, out):
    """``roll(u, shift, axis) - u`` written into ``out`` (which must not alias ``u``)."""
    u = np.asarray(u)
    if out is None:
        out = np.empty_like(u, dtype=np.result_type(u, float))
    u = np.moveaxis(u, axis, -1)
    o = np.moveaxis(out, axis, -1)
    if shift < 0:
        np.subtract(u[..., 1:], u[..., :-1], out=o[..., :-1])
        np.subtract(u[..., 0], u[..., -1], out=o[..., -1])
    else:
        np.subtract(u[..., :-1], u[..., 1:], out=o[..., 1:])
        np.subtract(u[..., -1], u[..., 0], out=o[..., 0])
    return out


def grad_x(u, out=None):
    """Forward difference along the last (width) axis: ``u[h, w+1] - u[h, w]``."""
    return _shift_diff(u, -1, -1, out)


def grad_x_adj(v, out=None):
    return _shift_diff(v, -1, 1, out)


def grad_y(u, out=None):
    """Forward difference along the height axis: ``u[h+1, w] - u[h, w]``."""
    return _shift_diff(u, -2, -1, out)


def grad_y_adj(v, out=None):
    return _shift_diff(v, -2, 1, out)


def prox_l1(z, lam, out=None):
    """Element-wise soft threshold, written as ``z - clip(z, -lam, lam)``."""
    if out is None:
        return z - np.clip(z, -lam, lam)
    if out is z:
        raise ValueError("prox_l1 cannot run in place on its input")
    np.clip(z, -lam, lam, out=out)
    return np.subtract(z, out, out=out)


def prox_nonneg(z, out=None):
    return np.maximum(z, 0.0, out=out)


class PhysicalCaps:
    """Index plan for the physical-constraint projection.

    For every non-alpha K line the cap is half the element's K-alpha
    amplitude. For every non-alpha L line it is the element's L-alpha
    amplitude. Families without their alpha line stay uncapped.
    """

    FACTORS = {"K": 0.5, "L": 1.0}

    def __init__(self, line_meta):
        alpha_col = {}
        for k, ln in enumerate(line_meta):
            if ln.is_alpha:
                alpha_col[(ln.element, ln.family)] = k
        target, source, factor = [], [], []
        for k, ln in enumerate(line_meta):
            if ln.is_alpha or ln.family not in self.FACTORS:
                continue
            src = alpha_col.get((ln.element, ln.family))
            if src is None:
                continue
            target.append(k)
            source.append(src)
            factor.append(self.FACTORS[ln.family])
        self.target = np.array(target, dtype=int)
        self.source = np.array(source, dtype=int)
        self.factor = np.array(factor, dtype=float)

    def __len__(self):
        return self.target.size

    def apply(self, z, out=None):
        """Cap rows of ``z`` (K, ...) in place on ``out`` (a copy by default)."""
        out = np.array(z, dtype=float, copy=True) if out is None else out
        if self.target.size:
            shape = (-1,) + (1,) * (out.ndim - 1)
            caps = self.factor.reshape(shape) * out[self.source]
            out[self.target] = np.minimum(out[self.target], caps)
        return out


def prox_physical(z, line_meta):
    """Apply the per-element line caps to amplitudes ``z`` of shape (K, ...).

    Alpha rows are never modified and are the only cap sources, so one pass
    is exact and the map is idempotent.
    """
    caps = line_meta if isinstance(line_meta, PhysicalCaps) else PhysicalCaps(line_meta)
    return caps.apply(z)


def difference_spectrum(h, w, rfft=True):
    """``|F(d_y)|^2`` (column) and ``|F(d_x)|^2`` (row) on the DFT grid."""
    ky = np.arange(h)
    kx = np.arange(w // 2 + 1) if rfft else np.arange(w)
    return 4.0 * np.sin(np.pi * ky / h)[:, None] ** 2, 4.0 * np.sin(np.pi * kx / w)[None, :] ** 2


def circulant_denominator(h, w, rho1, rho2, rho3, s_norm_sq):
    fy, fx = difference_spectrum(h, w)
    return rho1 * fx + rho2 * fy + (rho3 + s_norm_sq)


def circulant_solve(G, rho1, rho2, rho3, s_norm_sq, denom=None, workers=None):
    """Solve ``(rho1 Dx^T Dx + rho2 Dy^T Dy + (rho3 + ||S||^2) I) A = G`` per map.

    ``G`` has shape (..., H, W); the solve acts on the last two axes.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim < 2 or G.shape[-1] * G.shape[-2] == 0:
        raise DimensionError("circulant_solve needs non-empty (…, H, W) maps")
    h, w = G.shape[-2:]
    if denom is None:
        denom = circulant_denominator(h, w, rho1, rho2, rho3, s_norm_sq)
    workers = workers or max_workers()
    spec = scipy.fft.rfft2(G, axes=(-2, -1), workers=workers)
    spec /= denom
    return scipy.fft.irfft2(spec, s=(h, w), axes=(-2, -1), workers=workers)


def power_iteration_norm(operator, iters=100, tol=1e-6, seed=0):
    """Largest singular value of a matrix or linear operator.

    Runs power iteration on the normal operator from a seeded random start.
    A zero operator returns 0.
    """
    op = aslinearoperator(operator) if not isinstance(operator, LinearOperator) else operator
    n = op.shape[1]
    if n == 0 or op.shape[0] == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = op.rmatvec(op.matvec(x))
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        prev, est = est, nrm
        x = y / nrm
        if prev and abs(est - prev) <= tol * est:
            break
    # Rayleigh quotient is a tighter estimate than the norm ratio
    return float(np.sqrt(max(float(x @ op.rmatvec(op.matvec(x))), 0.0)))


def max_difference_symbol(h=None, w=None):
    """Largest value of ``|F(dx)|^2 + |F(dy)|^2`` on an h x w grid (8 if unknown)."""
    def axis_max(n):
        if n is None:
            return 4.0
        return max(4.0 * np.sin(np.pi * k / n) ** 2 for k in range(n))
    return axis_max(w) + axis_max(h)


def stacked_operator_norm(gram, rho=1.0, spatial_shape=None):
    """``||H||`` for ``H = [[rho S, 0, 0], [Dx, -I, 0], [Dy, 0, -I]]``.

    The DFT block-diagonalises H. At a frequency with difference symbol ``s``
    and an eigenvalue ``g`` of ``S^T S`` the normal operator reduces to
    ``[[rho^2 g + s, -sqrt(s)], [-sqrt(s), 1]]`` (plus eigenvalue 1), whose top
    eigenvalue grows with both ``g`` and ``s``. So only ``||S||^2`` needs power
    iteration; the rest is exact.
    """
    mu = rho**2 * power_iteration_norm(np.asarray(gram, dtype=float))
    s = max_difference_symbol(*(spatial_shape or (None, None)))
    b = mu + s + 1.0
    return float(np.sqrt((b + np.sqrt(max(b * b - 4.0 * mu, 0.0))) / 2.0))
