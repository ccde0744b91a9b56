"""Synthetic MA-XRF scenes rendered from the forward model ``Y = S A``.

A scene lists elements, each with peak amplitudes for some of its lines and
a spatial mask built from simple primitives in normalised image
coordinates. Lines without an explicit amplitude are filled in from their
family's alpha line with fixed ratios. Those ratios satisfy the physical
caps used by the solvers.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .core import ALPHA_LINE, LINE_FAMILY, Datacube, EnergyCalibration, load_line_table
from .exceptions import ConfigError, DomainError
from .solvers import AmplitudeMaps, build_pulse_matrix

# amplitude of a line relative to its family's alpha line
DEFAULT_RATIOS = {"Kb": 0.2, "Ll": 0.05, "Lb": 0.7, "Lg": 0.1}
# M alpha is tied to L alpha when only the L family is given
M_TO_L_RATIO = 0.3

MASK_KINDS = ("disk", "rect", "stripes", "blob", "ramp", "strokes", "pixels")


@dataclass(frozen=True)
class Shape:
    """Mask primitive. Coordinates are fractions of the image height/width."""

    kind: str
    params: dict = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ConfigError(f"unknown mask kind {self.kind!r}")


@dataclass(frozen=True)
class ElementRecipe:
    element: str
    lines: dict
    mask: tuple
    modulation: Shape | None = None


@dataclass(frozen=True)
class ScenePreset:
    name: str
    recipes: tuple
    height: int = 64
    width: int = 64
    channels: int = 1024
    energy_min: float = 0.0
    energy_max: float = 40000.0
    noise: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 2:
            raise ConfigError("scene dimensions must be positive")
        if self.noise not in ("none", "poisson"):
            raise ConfigError(f"noise must be 'none' or 'poisson', got {self.noise!r}")
        if not self.recipes:
            raise ConfigError("scene has no elements")
        for r in self.recipes:
            if any(a < 0 for a in r.lines.values()):
                raise ConfigError(f"{r.element}: amplitudes must be non-negative")
            if any(ln not in LINE_FAMILY for ln in r.lines):
                raise ConfigError(f"{r.element}: unknown line in {sorted(r.lines)}")

    @property
    def calibration(self):
        return EnergyCalibration(self.energy_min, self.energy_max, self.channels)

    @property
    def elements(self):
        return [r.element for r in self.recipes]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _grid(h, w):
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return yy, xx


def _soft(d, edge):
    """1 inside (d < 0), 0 outside, linear ramp of width ``edge``."""
    return np.clip(0.5 - d / edge, 0.0, 1.0) if edge > 0 else (d < 0).astype(float)


def render_mask(shape: Shape, h, w):
    yy, xx = _grid(h, w)
    p = shape.params
    edge = p.get("edge", 0.03)
    if shape.kind == "disk":
        d = np.hypot(yy - p["cy"], xx - p["cx"]) - p["r"]
        out = _soft(d, edge)
    elif shape.kind == "rect":
        dy = np.maximum(p["y0"] - yy, yy - p["y1"])
        dx = np.maximum(p["x0"] - xx, xx - p["x1"])
        out = _soft(np.maximum(dy, dx), edge)
    elif shape.kind == "stripes":
        theta = np.deg2rad(p.get("angle", 0.0))
        u = yy * np.cos(theta) + xx * np.sin(theta)
        out = 0.5 + 0.5 * np.sin(2 * np.pi * u / p["period"] + p.get("phase", 0.0))
    elif shape.kind == "blob":
        out = np.exp(-((yy - p["cy"]) ** 2 + (xx - p["cx"]) ** 2) / (2 * p["s"] ** 2))
    elif shape.kind == "ramp":
        u = xx if p.get("axis", "x") == "x" else yy
        out = p.get("lo", 0.0) + (p.get("hi", 1.0) - p.get("lo", 0.0)) * u
    elif shape.kind == "strokes":
        # wavy curves y = y0 + amp * sin(2 pi f x + phase), drawn with a Gaussian profile
        out = np.zeros((h, w))
        for y0, amp, freq, phase in p["curves"]:
            d = yy - (y0 + amp * np.sin(2 * np.pi * freq * xx + phase))
            out = np.maximum(out, np.exp(-0.5 * (d / p.get("width", 0.015)) ** 2))
    else:  # pixels
        out = np.zeros((h, w))
        for r, c in p["coords"]:
            if not (0 <= r < h and 0 <= c < w):
                raise ConfigError(f"pixel ({r}, {c}) outside a {h}x{w} image")
            out[r, c] = 1.0
    return shape.weight * out


def element_map(recipe: ElementRecipe, h, w):
    out = np.zeros((h, w))
    for s in recipe.mask:
        out += render_mask(s, h, w)
    if recipe.modulation is not None:
        out *= render_mask(recipe.modulation, h, w)
    return np.clip(out, 0.0, None)


def line_amplitudes(recipe: ElementRecipe, lines):
    """Peak amplitude for each table line of the element, filling defaults."""
    given = dict(recipe.lines)
    out = {}
    for ln in lines:
        if ln.line in given:
            out[ln.line] = float(given[ln.line])
            continue
        alpha = given.get(ALPHA_LINE[ln.family])
        if ln.family == "M" and alpha is None and "La" in given:
            out[ln.line] = M_TO_L_RATIO * given["La"]
        elif alpha is not None and ln.line in DEFAULT_RATIOS:
            out[ln.line] = DEFAULT_RATIOS[ln.line] * alpha
        else:
            out[ln.line] = 0.0
    return out


def truth_pulse_matrix(preset: ScenePreset, table=None):
    cal = preset.calibration
    table = table if table is not None else load_line_table(cal)
    missing = [el for el in preset.elements if el not in table]
    if missing:
        raise ConfigError(f"elements without in-range lines: {missing}")
    return build_pulse_matrix(preset.elements, table, cal)


def render_cube(preset: ScenePreset, table=None):
    """Render ``(Datacube, ground-truth AmplitudeMaps)`` for a preset.

    Poisson draws use one child seed per image row, so the output does not
    depend on how rows might be split across workers.
    """
    cal = preset.calibration
    S = truth_pulse_matrix(preset, table)
    h, w = preset.height, preset.width
    A = np.zeros((len(S.line_meta), h, w))
    for recipe in preset.recipes:
        base = element_map(recipe, h, w)
        cols = [k for k, ln in enumerate(S.line_meta) if ln.element == recipe.element]
        amps = line_amplitudes(recipe, [S.line_meta[k] for k in cols])
        for k in cols:
            A[k] = amps[S.line_meta[k].line] * base
    Y = S.atoms @ A.reshape(A.shape[0], -1)
    counts = Y.reshape(cal.channels, h, w)
    if preset.noise == "poisson":
        rows = np.random.SeedSequence(preset.seed).spawn(h)
        noisy = np.empty_like(counts)
        for r, ss in enumerate(rows):
            noisy[:, r, :] = np.random.default_rng(ss).poisson(counts[:, r, :])
        counts = noisy
    return Datacube(counts.astype(np.float32), cal), AmplitudeMaps(A, S.line_meta)


def map_correlation(estimate, truth):
    """Pearson correlation between two maps of the same shape."""
    x = np.asarray(estimate, dtype=float).ravel()
    y = np.asarray(truth, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError(f"shape mismatch {np.shape(estimate)} vs {np.shape(truth)}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(xc @ xc)
    sy = np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DomainError("correlation is undefined for a constant map")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def _shapes():
    return ScenePreset("shapes", (
        ElementRecipe("Fe", {"Ka": 80.0}, (Shape("disk", {"cy": 0.3, "cx": 0.3, "r": 0.22}),)),
        ElementRecipe("Co", {"Ka": 50.0}, (Shape("rect", {"y0": 0.55, "y1": 0.9, "x0": 0.1, "x1": 0.55}),)),
        ElementRecipe("Cu", {"Ka": 60.0}, (Shape("stripes", {"period": 0.35, "angle": 30.0}),)),
        ElementRecipe("Zn", {"Ka": 70.0}, (Shape("blob", {"cy": 0.65, "cx": 0.7, "s": 0.15}),)),
    ))


# underdrawing: a few long wavy strokes crossing the panel
_STROKES = ((0.22, 0.05, 1.5, 0.0), (0.45, 0.07, 1.0, 1.3), (0.68, 0.04, 2.0, 2.1), (0.85, 0.06, 1.2, 0.4))


def _cu_zn_overlap():
    return ScenePreset("cu_zn_overlap", (
        # copper pigment over large areas, 60-100 counts
        ElementRecipe("Cu", {"Ka": 100.0}, (
            Shape("rect", {"y0": 0.0, "y1": 0.6, "x0": 0.0, "x1": 1.0}),
            Shape("disk", {"cy": 0.8, "cx": 0.25, "r": 0.18}),
        ), modulation=Shape("ramp", {"axis": "x", "lo": 0.6, "hi": 1.0})),
        # zinc only in the underdrawing, Kb around 2 counts
        ElementRecipe("Zn", {"Ka": 10.0}, (Shape("strokes", {"curves": _STROKES, "width": 0.012}),)),
        # gilding whose L alpha sits within two widths of Zn Kb
        ElementRecipe("Au", {"La": 40.0}, (Shape("rect", {"y0": 0.3, "y1": 0.95, "x0": 0.5, "x1": 0.95}),)),
    ), noise="poisson", seed=7)


def _trace_element():
    coords = tuple((40 + i // 5, 20 + i % 5) for i in range(10))
    return ScenePreset("trace_element", (
        ElementRecipe("Fe", {"Ka": 60.0}, (Shape("rect", {"y0": 0.0, "y1": 1.0, "x0": 0.0, "x1": 1.0}),),
                      modulation=Shape("ramp", {"axis": "y", "lo": 0.5, "hi": 1.0})),
        ElementRecipe("Cu", {"Ka": 80.0}, (Shape("pixels", {"coords": coords}),)),
    ))


PRESETS = {"shapes": _shapes, "cu_zn_overlap": _cu_zn_overlap, "trace_element": _trace_element}


def preset(name, **overrides) -> ScenePreset:
    """A named preset with optional field overrides (height, noise, seed, ...)."""
    try:
        base = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base
