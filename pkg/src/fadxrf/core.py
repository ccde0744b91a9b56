"""Domain types: energy calibration, datacubes, spectra and the line table.

The energy axis is a strictly affine map from channel index to energy. Pulse
widths follow the detector resolution law ``FWHM = sqrt(C**2 * E + N**2)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .exceptions import ConfigError, DataError, DimensionError, DomainError, RangeError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

# FWHM of 145 eV at 5899 eV with 80 eV electronic noise.
DEFAULT_FWHM_N = 80.0
DEFAULT_FWHM_C = math.sqrt((145.0**2 - DEFAULT_FWHM_N**2) / 5899.0)

LINE_NAMES = ("Ka", "Kb", "Ll", "La", "Lb", "Lg", "Ma")
LINE_FAMILY = {"Ka": "K", "Kb": "K", "Ll": "L", "La": "L", "Lb": "L", "Lg": "L", "Ma": "M"}
ALPHA_LINE = {"K": "Ka", "L": "La", "M": "Ma"}
LINE_LABELS = {"Ka": "Kα", "Kb": "Kβ", "Ll": "Ll", "La": "Lα", "Lb": "Lβ", "Lg": "Lγ", "Ma": "Mα"}

# lines below this energy are outside the detection range of air-path scanners
DEFAULT_LOW_CUTOFF_EV = 1200.0


@dataclass(frozen=True)
class EnergyCalibration:
    """Linear channel-to-energy calibration plus the detector resolution law.

    Parameters
    ----------
    energy_min, energy_max : float
        Energy (eV) at channel 0 and channel ``channels``.
    channels : int
        Number of energy channels M.
    fwhm_c : float
        Charge-carrier term C of the resolution law, in eV**0.5.
    fwhm_n : float
        Electronic-noise term N of the resolution law, in eV.
    """

    energy_min: float = 0.0
    energy_max: float = 40000.0
    channels: int = 4096
    fwhm_c: float = DEFAULT_FWHM_C
    fwhm_n: float = DEFAULT_FWHM_N

    def __post_init__(self):
        if not self.energy_max > self.energy_min:
            raise ConfigError("energy_max must exceed energy_min")
        if int(self.channels) != self.channels or self.channels < 2:
            raise ConfigError("channels must be an integer >= 2")
        if self.fwhm_c < 0:
            raise ConfigError("fwhm_c must be non-negative")
        if not self.fwhm_n > 0:
            raise ConfigError("fwhm_n must be positive")

    @property
    def slope(self) -> float:
        """Energy width of one channel (eV/channel)."""
        return (self.energy_max - self.energy_min) / self.channels

    def channel_to_energy(self, channel):
        ch = np.asarray(channel, dtype=float)
        if np.any(ch < 0) or np.any(ch > self.channels) or np.any(~np.isfinite(ch)):
            raise RangeError(f"channel outside [0, {self.channels}]")
        out = self.energy_min + ch * self.slope
        return float(out) if out.ndim == 0 else out

    def energy_to_channel(self, energy):
        e = np.asarray(energy, dtype=float)
        if np.any(e < self.energy_min) or np.any(e > self.energy_max) or np.any(~np.isfinite(e)):
            raise RangeError(f"energy outside [{self.energy_min}, {self.energy_max}] eV")
        out = (e - self.energy_min) / self.slope
        return float(out) if out.ndim == 0 else out

    def fwhm_at_energy(self, energy):
        """Pulse FWHM in eV at ``energy`` eV."""
        e = np.asarray(energy, dtype=float)
        if np.any(e < 0) or np.any(~np.isfinite(e)):
            raise DomainError("energy must be non-negative")
        out = np.sqrt(self.fwhm_c**2 * e + self.fwhm_n**2)
        return float(out) if out.ndim == 0 else out

    def sigma_at_channel(self, channel):
        """Gaussian pulse width, in channels, at fractional channel ``channel``."""
        fwhm_ev = self.fwhm_at_energy(self.channel_to_energy(channel))
        return fwhm_ev * FWHM_TO_SIGMA / self.slope

    def to_dict(self):
        return {
            "energy_min": self.energy_min,
            "energy_max": self.energy_max,
            "channels": self.channels,
            "fwhm_c": self.fwhm_c,
            "fwhm_n": self.fwhm_n,
        }


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    calibration: EnergyCalibration

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size != self.calibration.channels:
            raise DimensionError(
                f"spectrum length {v.size} does not match {self.calibration.channels} channels"
            )
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DataError("spectrum values must be finite and non-negative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Datacube:
    """Photon counts of shape (M, H, W) with their energy calibration."""

    counts: np.ndarray
    calibration: EnergyCalibration = field(default_factory=EnergyCalibration)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise DimensionError(f"counts must be 3-D (M, H, W), got shape {c.shape}")
        if c.shape[0] != self.calibration.channels:
            raise DimensionError(
                f"cube has {c.shape[0]} channels, calibration expects {self.calibration.channels}"
            )
        c = np.ascontiguousarray(c, dtype=np.float32)
        if not np.all(np.isfinite(c)):
            raise DataError("counts contain non-finite values")
        if c.size and c.min() < 0:
            raise DataError("counts must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def shape(self):
        return self.counts.shape

    @property
    def spatial_shape(self):
        return self.counts.shape[1:]

    @property
    def n_pixels(self):
        return self.counts.shape[1] * self.counts.shape[2]

    def as_matrix(self):
        """(M, H*W) view with pixel index ``h*W + w``."""
        m, h, w = self.counts.shape
        return self.counts.reshape(m, h * w)


def _check_nonempty(cube: Datacube):
    if cube.counts.size == 0 or cube.n_pixels == 0:
        raise DimensionError("datacube has no pixels")


def average_spectrum(cube: Datacube) -> Spectrum:
    _check_nonempty(cube)
    return Spectrum(cube.counts.mean(axis=(1, 2), dtype=np.float64), cube.calibration)


def max_spectrum(cube: Datacube) -> Spectrum:
    _check_nonempty(cube)
    return Spectrum(cube.counts.max(axis=(1, 2)).astype(np.float64), cube.calibration)


@dataclass(frozen=True)
class ElementLine:
    element: str
    line: str
    energy: float

    def __post_init__(self):
        if self.line not in LINE_FAMILY:
            raise ConfigError(f"unknown line {self.line!r}")

    @property
    def family(self) -> str:
        return LINE_FAMILY[self.line]

    @property
    def is_alpha(self) -> bool:
        return ALPHA_LINE[self.family] == self.line

    @property
    def label(self) -> str:
        return f"{self.element} {LINE_LABELS[self.line]}"

    @property
    def key(self) -> str:
        return f"{self.element}_{self.line}"


class ElementLineTable:
    """Characteristic line energies, indexed by element and by energy.

    Elements keep their insertion order; within an element the lines are
    sorted by energy.
    """

    def __init__(self, lines):
        by_element = {}
        seen = set()
        for ln in lines:
            if (ln.element, ln.line) in seen:
                raise ConfigError(f"duplicate line {ln.element} {ln.line}")
            seen.add((ln.element, ln.line))
            by_element.setdefault(ln.element, []).append(ln)
        self._by_element = {el: sorted(v, key=lambda x: x.energy) for el, v in by_element.items()}
        self.lines = [ln for v in self._by_element.values() for ln in v]

    def __len__(self):
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def __contains__(self, element):
        return element in self._by_element

    @property
    def elements(self):
        return list(self._by_element)

    def lines_for(self, element):
        return list(self._by_element.get(element, []))

    def get(self, element, line):
        for ln in self._by_element.get(element, []):
            if ln.line == line:
                return ln
        return None

    def family_lines(self, element, family):
        return [ln for ln in self._by_element.get(element, []) if ln.family == family]

    def by_energy(self):
        return sorted(self.lines, key=lambda x: x.energy)

    def near(self, energy, tolerance):
        """Lines within ``tolerance`` eV of ``energy``, closest first."""
        hits = [ln for ln in self.lines if abs(ln.energy - energy) <= tolerance]
        return sorted(hits, key=lambda x: abs(x.energy - energy))

    def restricted(self, energy_min, energy_max):
        """Table keeping only lines with energy in [energy_min, energy_max].

        Elements left with no lines are kept out of the result.
        """
        return ElementLineTable(
            [ln for ln in self.lines if energy_min <= ln.energy <= energy_max]
        )

    def subset(self, elements):
        keep = set(elements)
        return ElementLineTable([ln for ln in self.lines if ln.element in keep])


_RAW_TABLE = None


def _raw_table():
    global _RAW_TABLE
    if _RAW_TABLE is None:
        text = resources.files("fadxrf").joinpath("data/lines.json").read_text()
        _RAW_TABLE = json.loads(text)["elements"]
    return _RAW_TABLE


def load_line_table(calibration=None, low_cutoff=DEFAULT_LOW_CUTOFF_EV, high_cutoff=None):
    """Load the embedded 34-element line table.

    Lines are kept if they fall inside the active energy window: from
    ``low_cutoff`` (or the calibration minimum, whichever is larger) up to
    ``high_cutoff`` (default: the calibration maximum, or 40 keV).
    """
    raw = _raw_table()
    lo = low_cutoff if low_cutoff is not None else 0.0
    hi = high_cutoff
    if calibration is not None:
        lo = max(lo, calibration.energy_min)
        hi = calibration.energy_max if hi is None else min(hi, calibration.energy_max)
    if hi is None:
        hi = 40000.0
    lines = [
        ElementLine(el, name, float(energy))
        for el, entry in raw.items()
        for name, energy in entry.items()
        if lo <= energy <= hi
    ]
    return ElementLineTable(lines)


def table_elements():
    """All element symbols in the embedded asset, in table order."""
    return list(_raw_table())
