"""Gaussian pulse dictionary and the two TV-regularised factorisation solvers.

Both solvers estimate ``A`` (K x H x W) in ``Y ~ S A`` subject to
non-negativity, per-element line-ratio caps and an anisotropic TV penalty on
every map. The data term only ever enters through ``S^T Y`` and ``S^T S``,
so after a single pass over the cube each iteration costs O(K^2 I).
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._threads import max_workers
from .core import Datacube, ElementLine, ElementLineTable, EnergyCalibration
from .exceptions import ConfigError, DictionaryError, DimensionError, SolverDivergenceError
from .operators import (
    PhysicalCaps,
    circulant_denominator,
    circulant_solve,
    grad_x,
    grad_x_adj,
    grad_y,
    grad_y_adj,
    power_iteration_norm,
    prox_l1,
    prox_nonneg,
    stacked_operator_norm,
)

ALPHA_SAFETY = 1.05


@dataclass(frozen=True)
class PulseMatrix:
    """Dictionary ``S`` (M x K) of unit-peak Gaussian atoms plus column metadata."""

    atoms: np.ndarray
    line_meta: tuple
    locations: np.ndarray
    sigmas: np.ndarray

    @property
    def shape(self):
        return self.atoms.shape

    @property
    def keys(self):
        return [ln.key for ln in self.line_meta]

    def index(self, element, line):
        for k, ln in enumerate(self.line_meta):
            if ln.element == element and ln.line == line:
                return k
        raise KeyError(f"{element} {line} not in dictionary")


def gaussian_atoms(n_channels, locations, sigmas):
    """Columns ``exp(-(n - t)^2 / 2 sigma^2)`` rescaled to a unit sample maximum."""
    n = np.arange(n_channels, dtype=float)[:, None]
    t = np.asarray(locations, dtype=float)[None, :]
    s = np.asarray(sigmas, dtype=float)[None, :]
    atoms = np.exp(-0.5 * ((n - t) / s) ** 2)
    peak = atoms.max(axis=0)
    peak[peak == 0] = 1.0
    return atoms / peak


def build_pulse_matrix(elements, table: ElementLineTable, calibration: EnergyCalibration) -> PulseMatrix:
    """One column per in-range table line of each element in ``elements``.

    ``elements`` may be a detected-element set or any iterable of symbols.
    Columns follow table element order, then line energy.
    """
    wanted = set(getattr(elements, "elements", elements))
    unknown = wanted - set(table.elements)
    if unknown:
        raise DictionaryError(f"elements not in line table: {sorted(unknown)}")
    meta = [
        ln for el in table.elements if el in wanted for ln in table.lines_for(el)
        if calibration.energy_min <= ln.energy <= calibration.energy_max
    ]
    if not meta:
        raise DictionaryError("no in-range lines for the requested elements")
    locs = np.array([calibration.energy_to_channel(ln.energy) for ln in meta])
    sig = np.asarray(calibration.sigma_at_channel(locs), dtype=float)
    atoms = gaussian_atoms(calibration.channels, locs, sig)
    return PulseMatrix(atoms, tuple(meta), locs, sig)


@dataclass
class AmplitudeMaps:
    """Solved amplitudes ``A`` stored as (K, H, W)."""

    maps: np.ndarray
    line_meta: tuple

    @property
    def spatial_shape(self):
        return self.maps.shape[1:]

    @property
    def keys(self):
        return [ln.key for ln in self.line_meta]

    def as_matrix(self):
        k = self.maps.shape[0]
        return self.maps.reshape(k, -1)

    def get(self, element, line):
        for k, ln in enumerate(self.line_meta):
            if ln.element == element and ln.line == line:
                return self.maps[k]
        raise KeyError(f"{element} {line} not in maps")


@dataclass(frozen=True)
class SolverConfig:
    """Weights and budget shared by both solvers.

    ``lam`` is the TV weight. ``rho1..rho3`` weight the ADMM splittings and
    ``rho`` the data block of the stacked FISTA system. ``alpha`` (1/step)
    defaults to 1.05 times the power-iteration estimate of ``||H||^2``.
    ``tol`` enables an early stop on the relative change of ``A``.
    """

    lam: float = 0.1
    rho1: float = 1.0
    rho2: float = 1.0
    rho3: float = 1.0
    rho: float = 1.0
    iters: int = 50
    alpha: float | None = None
    physical_constraint: bool = True
    record_mse: bool = True
    tol: float | None = None

    def __post_init__(self):
        for name in ("lam", "rho1", "rho2", "rho3", "rho"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and >= 0")
        if int(self.iters) != self.iters or self.iters < 1:
            raise ConfigError("iters must be an integer >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.tol is not None and not self.tol >= 0:
            raise ConfigError("tol must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class SolveTrace:
    solver: str
    mse: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    setup_ms: float = 0.0
    alpha: float | None = None
    s_norm_sq: float | None = None

    @property
    def iterations(self):
        return len(self.wall_ms)

    @property
    def total_ms(self):
        return self.setup_ms + float(np.sum(self.wall_ms))

    @property
    def final_mse(self):
        return self.mse[-1] if self.mse else None

    def summary(self):
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "final_mse": self.final_mse,
            "total_wall_ms": self.total_ms,
            "setup_ms": self.setup_ms,
        }

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "mse", "wall_ms"])
        for i, ms in enumerate(self.wall_ms):
            m = self.mse[i] if i < len(self.mse) else ""
            w.writerow([i + 1, m, ms])
        text = buf.getvalue()
        if path is not None:
            from .io import atomic_write_text

            atomic_write_text(path, text)
        return text


def mse(Y, S, A):
    """Mean of ``(Y - S A)^2`` over all M x I entries."""
    Y = np.asarray(Y, dtype=float)
    S = np.asarray(S, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 3:
        A = A.reshape(A.shape[0], -1)
    if Y.ndim == 3:
        Y = Y.reshape(Y.shape[0], -1)
    if S.ndim != 2 or S.shape[1] != A.shape[0] or Y.shape != (S.shape[0], A.shape[1]):
        raise DimensionError(f"shape mismatch: Y {Y.shape}, S {S.shape}, A {A.shape}")
    r = Y - S @ A
    return float(np.mean(r * r))


class _Problem:
    """Precomputed sufficient statistics ``S^T Y``, ``S^T S`` and ``||Y||^2``."""

    def __init__(self, Y, S, spatial_shape=None):
        if isinstance(Y, Datacube):
            spatial_shape = Y.spatial_shape
            Y = Y.as_matrix()
        S = S.atoms if isinstance(S, PulseMatrix) else np.asarray(S, dtype=float)
        Y = np.asarray(Y)
        if Y.ndim == 3:
            spatial_shape = Y.shape[1:]
            Y = Y.reshape(Y.shape[0], -1)
        if S.ndim != 2 or Y.ndim != 2 or S.shape[0] != Y.shape[0]:
            raise DimensionError(f"shape mismatch: Y {Y.shape}, S {S.shape}")
        if spatial_shape is None:
            spatial_shape = (1, Y.shape[1])
        h, w = spatial_shape
        if h * w != Y.shape[1] or h * w == 0:
            raise DimensionError(f"spatial shape {spatial_shape} does not match {Y.shape[1]} pixels")
        if S.shape[1] == 0:
            raise DictionaryError("pulse matrix has no columns")
        self.K = S.shape[1]
        self.M, self.I = Y.shape
        self.shape = (self.K, h, w)
        # the big product runs in the cube's precision; everything after is float64
        work = np.float32 if Y.dtype == np.float32 else np.float64
        self.StY = (S.astype(work).T @ Y.astype(work, copy=False)).astype(float).reshape(self.shape)
        self.gram = S.T @ S
        self._Y = Y
        self._y_sq = None

    @property
    def y_sq(self):
        # only needed for MSE, so computed on first use in float64 blocks
        if self._y_sq is None:
            flat = self._Y.reshape(-1)
            step = 1 << 20
            self._y_sq = sum(float(np.dot(b, b)) for b in (flat[j:j + step].astype(float) for j in range(0, flat.size, step)))
        return self._y_sq

    def gram_apply(self, A, out=None):
        K = self.K
        if out is None:
            return (self.gram @ A.reshape(K, -1)).reshape(A.shape)
        np.matmul(self.gram, A.reshape(K, -1), out=out.reshape(K, -1))
        return out

    def mse(self, A, gA=None):
        """MSE from the sufficient statistics; ``gA`` is ``S^T S A`` if known."""
        if gA is None:
            gA = self.gram_apply(A)
        val = self.y_sq - 2.0 * np.vdot(self.StY, A) + np.vdot(A, gA)
        return max(float(val), 0.0) / (self.M * self.I)


def _check_finite(solver, m, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverDivergenceError(solver, m)


def _line_meta(S):
    return S.line_meta if isinstance(S, PulseMatrix) else None


def _caps(S, cfg):
    meta = _line_meta(S)
    if not cfg.physical_constraint or meta is None:
        return None
    caps = PhysicalCaps(meta)
    return caps if len(caps) else None


def _finish(A, caps, S):
    A = prox_nonneg(A)
    if caps is not None:
        A = caps.apply(A, out=A)
    meta = _line_meta(S)
    if meta is None:
        meta = tuple(ElementLine("?", "Ka", 0.0) for _ in range(A.shape[0]))
    return AmplitudeMaps(A, meta)


def _rel_change(new, old):
    den = np.linalg.norm(old)
    return np.linalg.norm(new - old) / den if den > 0 else np.inf


# overflow shows up as non-finite iterates, which _check_finite reports as divergence
_quiet_fp = np.errstate(over="ignore", invalid="ignore")


@_quiet_fp
def admm_solve(Y, S, cfg: SolverConfig | None = None, spatial_shape=None):
    """Inner-loop-free ADMM.

    Splits ``Z1 = Dx A``, ``Z2 = Dy A``, ``Z3 = A``. The A-update linearises
    the data term around the previous iterate with ``L = ||S||^2 I``, which
    makes the system matrix circulant and solvable by FFT. The returned maps
    are projected onto the non-negative, physically capped set.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    prob = _Problem(Y, S, spatial_shape)
    caps = _caps(S, cfg)
    s_norm_sq = power_iteration_norm(prob.gram) if prob.K else 0.0
    # gram is S^T S, whose norm is already ||S||^2
    L = s_norm_sq
    workers = max_workers()
    K, h, w = prob.shape
    denom = circulant_denominator(h, w, cfg.rho1, cfg.rho2, cfg.rho3, L)
    A = np.zeros(prob.shape)
    Zt1, Zt2, Zt3 = (np.zeros(prob.shape) for _ in range(3))
    dxA = np.zeros(prob.shape)
    dyA = np.zeros(prob.shape)
    Z1, Z2, Z3, G, T, T2 = (np.empty(prob.shape) for _ in range(6))
    thr1 = cfg.lam / cfg.rho1 if cfg.rho1 > 0 else 0.0
    thr2 = cfg.lam / cfg.rho2 if cfg.rho2 > 0 else 0.0
    trace = SolveTrace("admm", s_norm_sq=L)
    trace.setup_ms = (time.perf_counter() - t0) * 1e3

    def add_scaled(dst, src, c):
        if c != 1.0:
            src *= c
        dst += src

    for m in range(1, cfg.iters + 1):
        t1 = time.perf_counter()
        prox_l1(np.subtract(dxA, Zt1, out=T), thr1, out=Z1)
        prox_l1(np.subtract(dyA, Zt2, out=T), thr2, out=Z2)
        prox_nonneg(np.subtract(A, Zt3, out=Z3), out=Z3)
        if caps is not None:
            caps.apply(Z3, out=Z3)
        # G = S^T Y + (L I - S^T S) A + sum_i rho_i D_i^T (Z_i + Zt_i)
        prob.gram_apply(A, out=G)
        np.subtract(prob.StY, G, out=G)
        add_scaled(G, np.multiply(A, L, out=T), 1.0)
        if cfg.rho1:
            add_scaled(G, grad_x_adj(np.add(Z1, Zt1, out=T), out=T2), cfg.rho1)
        if cfg.rho2:
            add_scaled(G, grad_y_adj(np.add(Z2, Zt2, out=T), out=T2), cfg.rho2)
        if cfg.rho3:
            add_scaled(G, np.add(Z3, Zt3, out=T), cfg.rho3)
        A_new = circulant_solve(G, cfg.rho1, cfg.rho2, cfg.rho3, L, denom=denom, workers=workers)
        grad_x(A_new, out=dxA)
        grad_y(A_new, out=dyA)
        Zt1 += Z1
        Zt1 -= dxA
        Zt2 += Z2
        Zt2 -= dyA
        Zt3 += Z3
        Zt3 -= A_new
        _check_finite("admm", m, A_new)
        stop = cfg.tol is not None and _rel_change(A_new, A) < cfg.tol
        A = A_new
        trace.wall_ms.append((time.perf_counter() - t1) * 1e3)
        if cfg.record_mse:
            trace.mse.append(prob.mse(A))
        if stop:
            break
    return _finish(A, caps, S), trace


def fista_momentum(d_prev):
    """Next term of ``d = (1 + sqrt(1 + 4 d_prev^2)) / 2``."""
    return (1.0 + math.sqrt(1.0 + 4.0 * d_prev * d_prev)) / 2.0


def fista_alpha(gram, rho=1.0, spatial_shape=None):
    """Default inverse step: the safety factor times ``||H||^2``."""
    return ALPHA_SAFETY * stacked_operator_norm(gram, rho, spatial_shape) ** 2


def fista_objective(Y, S, A, Z1, Z2, cfg: SolverConfig):
    """Value of the stacked least-squares objective plus the l1 terms (no indicators)."""
    prob = _Problem(Y, S, A.shape[1:])
    data = prob.y_sq - 2 * np.vdot(prob.StY, A) + np.vdot(A, prob.gram_apply(A))
    rx = grad_x(A) - Z1
    ry = grad_y(A) - Z2
    return 0.5 * (cfg.rho**2 * max(float(data), 0.0) + np.vdot(rx, rx) + np.vdot(ry, ry)) + cfg.lam * (
        np.abs(Z1).sum() + np.abs(Z2).sum()
    )


@_quiet_fp
def fista_solve(Y, S, cfg: SolverConfig | None = None, spatial_shape=None, return_aux=False):
    """FISTA on the stacked system ``H = [[rho S, 0, 0], [Dx, -I, 0], [Dy, 0, -I]]``.

    ``H^T (H U - Y'')`` is evaluated matrix-free from ``S^T S`` and
    ``S^T Y``. The l1 step uses the proximal-gradient threshold
    ``lam / alpha``.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    prob = _Problem(Y, S, spatial_shape)
    caps = _caps(S, cfg)
    alpha = cfg.alpha if cfg.alpha is not None else fista_alpha(prob.gram, cfg.rho, prob.shape[1:])
    if not alpha > 0:
        raise ConfigError("alpha must be > 0")
    step = 1.0 / alpha
    thr = cfg.lam * step
    rho_sq = cfg.rho**2
    rhs = rho_sq * prob.StY
    # three rotating buffers per variable: previous, current, next
    A, A_prev, A_next = (np.zeros(prob.shape) for _ in range(3))
    Z1, Z1_prev, Z1_next = (np.zeros(prob.shape) for _ in range(3))
    Z2, Z2_prev, Z2_next = (np.zeros(prob.shape) for _ in range(3))
    UA, U1, U2, rx, ry, G, T = (np.empty(prob.shape) for _ in range(7))
    d_prev = 0.0
    trace = SolveTrace("fista", alpha=alpha)
    trace.setup_ms = (time.perf_counter() - t0) * 1e3

    def extrapolate(x, x_prev, beta, out):
        np.subtract(x, x_prev, out=out)
        out *= beta
        out += x
        return out

    for m in range(1, cfg.iters + 1):
        t1 = time.perf_counter()
        d = fista_momentum(d_prev)
        beta = (d_prev - 1.0) / d
        if beta:
            ua, u1, u2 = extrapolate(A, A_prev, beta, UA), extrapolate(Z1, Z1_prev, beta, U1), extrapolate(Z2, Z2_prev, beta, U2)
        else:
            ua, u1, u2 = A, Z1, Z2
        grad_x(ua, out=rx)
        rx -= u1
        grad_y(ua, out=ry)
        ry -= u2
        # G = rho^2 (S^T S U_A - S^T Y) + Dx^T rx + Dy^T ry
        prob.gram_apply(ua, out=G)
        if rho_sq != 1.0:
            G *= rho_sq
        G -= rhs
        G += grad_x_adj(rx, out=T)
        G += grad_y_adj(ry, out=T)
        G *= -step
        G += ua
        prox_nonneg(G, out=A_next)
        if caps is not None:
            caps.apply(A_next, out=A_next)
        rx *= step
        rx += u1
        prox_l1(rx, thr, out=Z1_next)
        ry *= step
        ry += u2
        prox_l1(ry, thr, out=Z2_next)
        _check_finite("fista", m, A_next)
        stop = cfg.tol is not None and _rel_change(A_next, A) < cfg.tol
        A_prev, A, A_next = A, A_next, A_prev
        Z1_prev, Z1, Z1_next = Z1, Z1_next, Z1_prev
        Z2_prev, Z2, Z2_next = Z2, Z2_next, Z2_prev
        d_prev = d
        trace.wall_ms.append((time.perf_counter() - t1) * 1e3)
        if cfg.record_mse:
            trace.mse.append(prob.mse(A))
        if stop:
            break
    maps = _finish(A, caps, S)
    if return_aux:
        return maps, trace, (Z1, Z2)
    return maps, trace


SOLVERS = {"admm": admm_solve, "fista": fista_solve}


def solve(Y, S, solver="fista", cfg=None, spatial_shape=None):
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ConfigError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(Y, S, cfg, spatial_shape=spatial_shape)
