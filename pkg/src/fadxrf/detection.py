"""Gaussian pulse detection on summary spectra.

Each overlapping window is modelled as a stream of Gaussian pulses sharing one
width. Dividing the window's DFT by the Gaussian transform leaves a sum of
complex exponentials whose frequencies encode the pulse locations; these are
recovered with a matrix pencil (ESPRIT form) on a Hankel matrix of the
deconvolved coefficients. Locations are then polished by non-linear least
squares in the sample domain and amplitudes fitted against Gaussian atoms.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.signal.windows import tukey

from ._threads import max_workers
from .core import Spectrum
from .exceptions import ConfigError, DomainError

log = logging.getLogger(__name__)

MAD_TO_STD = 1.4826
# pulses closer than half a FWHM (in sigma units) cannot be told apart
HALF_FWHM = math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class WindowConfig:
    """Windowing and model-order settings for pulse detection.

    ``amp_floor`` is an absolute count threshold (0 keeps detection invariant
    to spectrum scaling); ``noise_factor`` scales the per-window noise estimate
    into a second amplitude threshold. ``tau_*`` parametrise
    :func:`uncertainty_factor`. With ``adapt_max_width`` the pulse width used
    on a maximum spectrum is rescaled by :func:`estimate_width_factor`.
    """

    window_len: int = 128
    overlap: float = 0.5
    max_lines_per_window: int = 8
    sv_threshold: float = 0.05
    amp_floor: float = 0.0
    noise_factor: float = 3.0
    band_cutoff: float = 1e-3
    merge_radius: float = 1.0
    rel_floor: float = 1e-4
    adapt_max_width: bool = True
    tau_ref: float = 3.0
    tau_min: float = 1.0
    tau_max: float = 8.0

    def __post_init__(self):
        if self.window_len < 8:
            raise ConfigError("window_len must be >= 8")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must be in [0, 1)")
        if self.max_lines_per_window < 1:
            raise ConfigError("max_lines_per_window must be >= 1")
        if not 0 < self.sv_threshold < 1:
            raise ConfigError("sv_threshold must be in (0, 1)")
        if self.amp_floor < 0:
            raise ConfigError("amp_floor must be non-negative")
        if not 0 < self.band_cutoff < 1:
            raise ConfigError("band_cutoff must be in (0, 1)")
        if not 0 < self.tau_min <= self.tau_max:
            raise ConfigError("need 0 < tau_min <= tau_max")


@dataclass(frozen=True)
class NoiseModel:
    scale: float

    def __post_init__(self):
        if not self.scale >= 0:
            raise ConfigError("noise scale must be non-negative")


@dataclass(frozen=True)
class DetectedPulse:
    location: float
    amplitude: float
    source: str
    window_id: int
    uncertainty: float

    def to_dict(self):
        return {
            "location_channel": self.location,
            "amplitude": self.amplitude,
            "source": self.source,
            "window_id": self.window_id,
            "uncertainty_channels": self.uncertainty,
        }


class Window(NamedTuple):
    index: int
    start: int
    stop: int
    core_start: int
    core_stop: int


class WindowResult(NamedTuple):
    pulses: list
    status: str  # "ok", "empty" or "ill-conditioned"
    noise: float = 0.0


def split_windows(spec, cfg: WindowConfig):
    """Cover ``[0, M)`` with overlapping windows.

    ``spec`` may be a :class:`Spectrum` or a channel count. The core of each
    window runs between the midpoints of its overlaps with the neighbours, so
    cores tile ``[0, M)`` without gaps.
    """
    n = spec if isinstance(spec, (int, np.integer)) else len(spec)
    length = cfg.window_len
    if length > n:
        raise ConfigError(f"window_len {length} exceeds spectrum length {n}")
    step = length - int(math.floor(cfg.overlap * length))
    starts = list(range(0, n - length + 1, step))
    if starts[-1] + length < n:
        starts.append(n - length)
    stops = [s + length for s in starts]
    bounds = [0] + [(starts[j + 1] + stops[j]) // 2 for j in range(len(starts) - 1)] + [n]
    return [Window(j, starts[j], stops[j], bounds[j], bounds[j + 1]) for j in range(len(starts))]


def estimate_noise(samples) -> NoiseModel:
    """Robust noise scale from the MAD of first differences."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return NoiseModel(0.0)
    d = np.diff(x)
    mad = np.median(np.abs(d - np.median(d)))
    return NoiseModel(float(MAD_TO_STD * mad / math.sqrt(2.0)))


def uncertainty_factor(amplitude, noise_scale, tau_ref=3.0, tau_min=1.0, tau_max=8.0):
    """Assignment tolerance (channels) for a pulse of the given amplitude.

    ``clamp(tau_ref * sqrt(noise_scale / amplitude), tau_min, tau_max)``:
    larger pulses are located more reliably and get a tighter tolerance.
    """
    if not amplitude > 0:
        raise DomainError("amplitude must be positive")
    tau = tau_ref * math.sqrt(max(noise_scale, 0.0) / amplitude)
    return float(min(max(tau, tau_min), tau_max))


def _gauss_atoms(n, locs, sigmas):
    return np.exp(-((n[:, None] - locs[None, :]) ** 2) / (2.0 * sigmas[None, :] ** 2))


def _pencil_locations(x, sigma, cfg):
    """Pulse locations (window coordinates) from the deconvolved DFT, or None."""
    length = x.size
    xt = x * tukey(length, cfg.overlap) if cfg.overlap > 0 else x
    spec = np.fft.fft(xt)
    band = int(math.floor(length / (math.pi * sigma) * math.sqrt(math.log(1.0 / cfg.band_cutoff) / 2.0)))
    band = min(band, length // 2 - 1)
    if band < 1:
        return None
    m = np.arange(-band, band + 1)
    kernel = math.sqrt(2.0 * math.pi) * sigma * np.exp(-2.0 * (math.pi * sigma * m / length) ** 2)
    coeffs = spec[m % length] / kernel

    n_coef = coeffs.size
    p = n_coef // 2
    hankel = np.lib.stride_tricks.sliding_window_view(coeffs, p + 1)
    try:
        u, s, _ = np.linalg.svd(hankel, full_matrices=False)
    except np.linalg.LinAlgError:
        return None
    if not s[0] > 0:
        return np.empty(0)
    order = int(np.sum(s / s[0] > cfg.sv_threshold))
    order = min(order, cfg.max_lines_per_window, hankel.shape[0] - 1)
    if order < 1:
        return np.empty(0)
    try:
        shift = np.linalg.lstsq(u[:-1, :order], u[1:, :order], rcond=None)[0]
        z = np.linalg.eigvals(shift)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(z)):
        return None
    return np.sort(np.mod(-np.angle(z) * length / (2.0 * math.pi), length))


def _refine(x, locs, width):
    """Polish locations and amplitudes by least squares; prune degenerate atoms.

    ``width`` maps window-coordinate locations to pulse widths. Widths are
    frozen during each fit and re-evaluated at the fitted locations.
    """
    n = np.arange(x.size, dtype=float)
    locs = np.asarray(locs, dtype=float)
    # each pass removes at least one atom or converges
    for _ in range(locs.size + 2):
        if locs.size == 0:
            break
        k = locs.size
        sig = width(locs)
        amps = np.linalg.lstsq(_gauss_atoms(n, locs, sig), x, rcond=None)[0]

        def resid(p):
            return _gauss_atoms(n, p[:k], sig) @ p[k:] - x

        def jac(p):
            g = _gauss_atoms(n, p[:k], sig)
            dt = g * (n[:, None] - p[None, :k]) / sig[None, :] ** 2 * p[None, k:]
            return np.hstack([dt, g])

        fit = least_squares(resid, np.r_[locs, amps], jac=jac, method="lm", x_scale="jac",
                            xtol=1e-9, ftol=1e-9, gtol=1e-12, max_nfev=50 * (2 * k + 1))
        locs, amps = fit.x[:k], fit.x[k:]
        order = np.argsort(locs)
        locs, amps, sig = locs[order], amps[order], sig[order]

        drop = (amps <= 0) | (locs < -3.0 * sig) | (locs > x.size - 1 + 3.0 * sig)
        if k > 1:
            # merge the weaker member of each close pair into the stronger one
            for i in np.flatnonzero(np.diff(locs) < HALF_FWHM * np.minimum(sig[1:], sig[:-1])):
                drop[i if amps[i] < amps[i + 1] else i + 1] = True
        if not drop.any():
            if np.allclose(width(locs), sig, rtol=1e-6, atol=0.0):
                return locs, amps
        locs = locs[~drop]
    if locs.size:
        amps = np.linalg.lstsq(_gauss_atoms(n, locs, width(locs)), x, rcond=None)[0]
        return locs, amps
    return np.empty(0), np.empty(0)


def estimate_width_factor(values, calibration, n_peaks=5, bounds=(1.0, 2.0)):
    """Ratio of observed to calibrated pulse width, from the strongest peaks.

    Each of the ``n_peaks`` highest local maxima is fitted alone with a
    free-width Gaussian over +-3 calibrated sigma; the median width ratio is
    returned, clipped to ``bounds``. A maximum spectrum of a noisy cube has
    peaks wider than the detector response: near a peak of mean ``a`` the
    largest of many Poisson draws adds roughly ``c * sqrt(a)``, a bump
    sqrt(2) times wider than the pulse itself.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return 1.0
    idx = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    idx = idx[np.argsort(v[idx], kind="stable")[::-1]][:n_peaks]
    ratios = []
    for p in idx:
        s0 = float(calibration.sigma_at_channel(p))
        lo, hi = max(0, int(p - 3 * s0)), min(v.size, int(p + 3 * s0) + 1)
        n = np.arange(lo, hi, dtype=float)
        x = v[lo:hi]
        if x.size < 5:
            continue

        def resid(q, n=n, x=x, s0=s0):
            return q[1] * np.exp(-0.5 * ((n - q[0]) / (s0 * np.exp(q[2]))) ** 2) - x

        fit = least_squares(resid, [float(p), float(v[p]), 0.0], method="lm", x_scale="jac")
        if fit.success and np.isfinite(fit.x[2]):
            ratios.append(math.exp(fit.x[2]))
    if not ratios:
        return 1.0
    return float(np.clip(np.median(ratios), *bounds))


def detect_lines_window(samples, sigma, cfg: WindowConfig, noise: NoiseModel | None = None,
                        core=None, width=None) -> WindowResult:
    """Detect Gaussian pulses of width ``sigma`` in one window.

    Returns a :class:`WindowResult` whose ``pulses`` are ``(location,
    amplitude)`` pairs in window coordinates, restricted to ``core`` (a
    half-open ``(lo, hi)`` range, default the whole window).

    ``width`` optionally maps window locations to pulse widths for the
    sample-domain refinement; the Fourier stage always uses ``sigma``.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("window is empty")
    if not np.all(np.isfinite(x)):
        return WindowResult([], "ill-conditioned")
    if noise is None:
        noise = estimate_noise(x)
    threshold = max(cfg.amp_floor, cfg.noise_factor * noise.scale)
    peak = float(np.max(np.abs(x)))
    if peak == 0.0 or peak < threshold:
        return WindowResult([], "empty")

    locs = _pencil_locations(x, sigma, cfg)
    if locs is None:
        log.debug("matrix pencil ill-conditioned (sigma=%.3g, n=%d)", sigma, x.size)
        return WindowResult([], "ill-conditioned")
    if locs.size == 0:
        return WindowResult([], "empty")
    try:
        if width is None:
            def width(t):
                return np.full(np.shape(t), float(sigma))
        locs, amps = _refine(x, locs, width)
    except (np.linalg.LinAlgError, ValueError):
        return WindowResult([], "ill-conditioned")

    # sparse spectra (a maximum spectrum far from any peak) can drive the MAD
    # estimate to zero, so the fit residual over the core also bounds the noise
    # scale (the tapered window edges are modelled poorly by design)
    lo, hi = (0.0, float(x.size)) if core is None else core
    model = _gauss_atoms(np.arange(x.size, dtype=float), locs, width(locs)) @ amps if locs.size else 0.0
    resid = x - model
    seg = resid[int(math.ceil(lo)):int(math.ceil(hi))]
    scale = max(noise.scale, float(np.sqrt(np.mean(seg**2)))) if seg.size else noise.scale
    threshold = max(cfg.amp_floor, cfg.noise_factor * scale)
    keep = (amps > 0) & (amps >= threshold) & (locs >= lo) & (locs < hi)
    pulses = [(float(t), float(a)) for t, a in zip(locs[keep], amps[keep])]
    return WindowResult(pulses, "ok", scale)


def merge_pulses(pulses, radius):
    """Collapse pulses closer than ``radius`` channels, keeping the larger one."""
    merged = []
    for p in sorted(pulses, key=lambda q: q.location):
        if merged and p.location - merged[-1].location < radius:
            if p.amplitude > merged[-1].amplitude:
                merged[-1] = p
        else:
            merged.append(p)
    return merged


def detect_all(spec: Spectrum, cfg: WindowConfig | None = None, source="average",
               diagnostics=None):
    """Detect pulses across the whole spectrum.

    Windows that fail are skipped (their status is appended to
    ``diagnostics`` when a list is given); the rest of the spectrum is still
    processed.
    """
    cfg = cfg or WindowConfig()
    values = np.asarray(spec.values, dtype=float)
    cal = spec.calibration
    windows = split_windows(values.size, cfg)
    global_floor = cfg.rel_floor * float(values.max()) if values.size else 0.0
    factor = 1.0
    if cfg.adapt_max_width and source == "maximum":
        factor = estimate_width_factor(values, cal)
        log.debug("maximum spectrum width factor %.3f", factor)

    def run(win):
        x = values[win.start:win.stop]
        if not x.max() > global_floor:
            return win, WindowResult([], "empty"), NoiseModel(0.0)
        noise = estimate_noise(x)
        sigma = factor * cal.sigma_at_channel(0.5 * (win.start + win.stop))
        core = (win.core_start - win.start, win.core_stop - win.start)

        def width(t):
            return factor * cal.sigma_at_channel(np.clip(win.start + np.asarray(t), 0, cal.channels))

        return win, detect_lines_window(x, sigma, cfg, noise, core, width), noise

    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, windows))
    else:
        results = [run(w) for w in windows]

    found = []
    for win, res, noise in results:
        if res.status == "ill-conditioned":
            log.warning("window %d [%d, %d) skipped: ill-conditioned", win.index, win.start, win.stop)
        if diagnostics is not None and res.status != "ok":
            diagnostics.append((win.index, res.status))
        for t, a in res.pulses:
            loc = win.start + t
            if not 0 <= loc < values.size:
                continue
            tau = uncertainty_factor(a, res.noise, cfg.tau_ref, cfg.tau_min, cfg.tau_max)
            found.append(DetectedPulse(loc, a, source, win.index, tau))
    return merge_pulses(found, cfg.merge_radius)
