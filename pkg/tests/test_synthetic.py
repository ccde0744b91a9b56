import numpy as np
import pytest

from fadxrf.assignment import detect_elements
from fadxrf.core import load_line_table
from fadxrf.exceptions import ConfigError, DomainError
from fadxrf.operators import PhysicalCaps
from fadxrf.solvers import admm_solve, build_pulse_matrix, fista_solve, mse
from fadxrf.synthetic import (PRESETS, ElementRecipe, ScenePreset, Shape, map_correlation, preset, render_cube,
                              render_mask)


def test_noiseless_cube_is_exact_forward_model(shapes_scene):
    _, cube, truth, S = shapes_scene
    Y = cube.as_matrix().astype(float)
    # counts are stored as float32, so "zero" means float32 rounding level
    assert mse(Y, S.atoms, truth.as_matrix()) <= 1e-12 * np.mean(Y**2)


def test_poisson_is_reproducible():
    p = preset("shapes", noise="poisson", seed=5, height=16, width=16)
    a, _ = render_cube(p)
    b, _ = render_cube(p)
    c, _ = render_cube(p.replace(seed=6))
    assert a.counts.tobytes() == b.counts.tobytes()
    assert a.counts.tobytes() != c.counts.tobytes()
    assert np.all(a.counts == np.round(a.counts))


def test_cu_zn_weak_kbeta(cu_zn_scene):
    _, _, truth, _ = cu_zn_scene
    zn_kb = truth.get("Zn", "Kb")
    assert zn_kb.max() == pytest.approx(2.0, abs=0.05)
    assert np.allclose(zn_kb, 0.2 * truth.get("Zn", "Ka"))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_truth_respects_line_caps(name):
    _, truth = render_cube(preset(name))
    caps = PhysicalCaps(truth.line_meta)
    assert np.array_equal(caps.apply(truth.maps), truth.maps)
    assert np.all(truth.maps >= 0)


def test_trace_preset_pixels():
    _, truth = render_cube(preset("trace_element"))
    assert np.count_nonzero(truth.get("Cu", "Ka")) == 10


def test_map_correlation_examples(rng):
    x = rng.random((5, 6))
    assert map_correlation(x, x) == pytest.approx(1.0)
    assert map_correlation(-x, x) == pytest.approx(-1.0)
    y = rng.random((5, 6))
    a, b = x.ravel(), y.ravel()
    ma, mb = sum(a) / a.size, sum(b) / b.size
    num = sum((p - ma) * (q - mb) for p, q in zip(a, b))
    den = (sum((p - ma) ** 2 for p in a) * sum((q - mb) ** 2 for q in b)) ** 0.5
    assert abs(map_correlation(x, y) - num / den) < 1e-12
    with pytest.raises(DomainError):
        map_correlation(np.ones((3, 3)), x[:3, :3])
    with pytest.raises(DomainError):
        map_correlation(x, x[:2])


def test_invalid_presets():
    with pytest.raises(ConfigError):
        preset("nope")
    with pytest.raises(ConfigError):
        preset("shapes", noise="gaussian")
    with pytest.raises(ConfigError):
        Shape("hexagon")
    mask = (Shape("disk", {"cy": 0.5, "cx": 0.5, "r": 0.2}),)
    with pytest.raises(ConfigError):
        ScenePreset("x", (ElementRecipe("Fe", {"Ka": -1.0}, mask),))
    with pytest.raises(ConfigError):
        ScenePreset("x", (ElementRecipe("Fe", {"Kz": 1.0}, mask),))
    with pytest.raises(ConfigError):
        render_mask(Shape("pixels", {"coords": ((99, 0),)}), 10, 10)
    with pytest.raises(ConfigError):
        render_cube(ScenePreset("x", (ElementRecipe("Xx", {"Ka": 1.0}, mask),)))


@pytest.mark.parametrize("kind,params", [
    ("disk", {"cy": 0.5, "cx": 0.5, "r": 0.3}),
    ("rect", {"y0": 0.1, "y1": 0.5, "x0": 0.2, "x1": 0.9}),
    ("stripes", {"period": 0.25, "angle": 45.0}),
    ("blob", {"cy": 0.5, "cx": 0.5, "s": 0.1}),
    ("ramp", {"axis": "y", "lo": 0.2, "hi": 0.8}),
    ("strokes", {"curves": ((0.5, 0.1, 1.0, 0.0),)}),
])
def test_masks_bounded(kind, params):
    m = render_mask(Shape(kind, params), 20, 30)
    assert m.shape == (20, 30) and m.min() >= 0 and 0 < m.max() <= 1


def _pipeline_correlations(p, solver):
    cube, truth = render_cube(p)
    found = detect_elements(cube)
    cal = p.calibration
    S = build_pulse_matrix(found, load_line_table(cal), cal)
    maps, _ = solver(cube, S)
    return found, {ln.key: map_correlation(maps.get(ln.element, ln.line), truth.maps[k])
                   for k, ln in enumerate(truth.line_meta) if truth.maps[k].std() > 0}


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("solver", [admm_solve, fista_solve])
def test_noiseless_pipeline_recovers_every_element(name, solver):
    p = preset(name, noise="none")
    found, r = _pipeline_correlations(p, solver)
    assert set(p.elements) <= set(found.elements)
    assert min(r.values()) > 0.95


@pytest.mark.parametrize("name", ["shapes", "trace_element"])
def test_poisson_pipeline_alpha_lines(name):
    p = preset(name, noise="poisson", seed=0)
    found, r = _pipeline_correlations(p, fista_solve)
    assert found.elements == p.elements
    assert all(v > 0.8 for k, v in r.items() if k.endswith(("_Ka", "_La", "_Ma")))
