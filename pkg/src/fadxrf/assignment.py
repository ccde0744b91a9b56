"""Assign detected pulses to characteristic lines and score element presence.

Scores follow a three-level hierarchy. A line confidence score (LCS) is a
hinge on the distance between a pulse and a theoretical line. A family
confidence score (FCS) favours the family's alpha line. An element confidence
score (ECS) takes the best family, but only if some K or L line was matched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ALPHA_LINE, LINE_LABELS, LINE_NAMES, Datacube, ElementLineTable, average_spectrum, load_line_table, max_spectrum
from .detection import DetectedPulse, WindowConfig, detect_all
from .exceptions import DomainError

FAMILIES = ("K", "L", "M")


def lcs_raw(t_k, tau_k, t_pq):
    """Hinge score ``max(1 - |t_k - t_pq| / tau_k, 0)``."""
    if not np.all(np.asarray(tau_k) > 0):
        raise DomainError("tau must be positive")
    return np.maximum(1.0 - np.abs(np.asarray(t_k) - t_pq) / tau_k, 0.0)


@dataclass
class LineConfidence:
    element: str
    line: str
    energy: float
    lcs: float
    matched_pulse: DetectedPulse | None = None


@dataclass
class ElementConfidence:
    element: str
    fcs_k: float
    fcs_l: float
    fcs_m: float
    ecs: float
    lines: list = field(default_factory=list)

    def to_dict(self):
        return {
            "fcs": {"K": self.fcs_k, "L": self.fcs_l, "M": self.fcs_m},
            "ecs": self.ecs,
            "lines": [
                {
                    "line": lc.line,
                    "label": LINE_LABELS[lc.line],
                    "energy_ev": lc.energy,
                    "lcs": lc.lcs,
                    "matched_location_channel": None if lc.matched_pulse is None else lc.matched_pulse.location,
                    "matched_amplitude": None if lc.matched_pulse is None else lc.matched_pulse.amplitude,
                }
                for lc in self.lines
            ],
        }


@dataclass
class Assignment:
    """Post-constraint score tensor ``v[k, p, q]`` plus its index maps.

    ``q`` runs over :data:`~fadxrf.core.LINE_NAMES`; lines absent from the
    table for an element have no entry in ``present`` and score 0.
    """

    v: np.ndarray
    elements: list
    present: np.ndarray
    energies: np.ndarray

    @property
    def line_scores(self):
        """``v~[p, q] = sum_k v[k, p, q]``."""
        return self.v.sum(axis=0)

    def matched(self):
        """``(p, q) -> k`` for every line with a non-zero score."""
        k, p, q = np.nonzero(self.v)
        return {(pi, qi): ki for ki, pi, qi in zip(k, p, q)}


def _line_grid(table, calibration):
    elements = table.elements
    energies = np.full((len(elements), len(LINE_NAMES)), np.nan)
    for p, el in enumerate(elements):
        for ln in table.lines_for(el):
            energies[p, LINE_NAMES.index(ln.line)] = ln.energy
    channels = np.full_like(energies, np.nan)
    ok = ~np.isnan(energies)
    if calibration is None:
        channels[ok] = energies[ok]
    else:
        inside = ok & (energies >= calibration.energy_min) & (energies <= calibration.energy_max)
        channels[inside] = calibration.energy_to_channel(energies[inside])
    return elements, energies, channels


def assign_pulses(pulses, table: ElementLineTable, calibration=None) -> Assignment:
    """Score every (pulse, element, line) triple and apply both constraints.

    Constraint (a): each element line keeps only its best-scoring pulse.
    Constraint (b): each pulse keeps only its best-scoring line per element.
    They are applied once, in that order. Ties go to the lower pulse index
    for (a) and the lower-energy line for (b).

    Without a calibration, table energies are taken to be channel positions
    already.
    """
    elements, energies, channels = _line_grid(table, calibration)
    n_el, n_ln = channels.shape
    present = ~np.isnan(channels)
    v = np.zeros((len(pulses), n_el, n_ln))
    if not pulses:
        return Assignment(v, elements, present, energies)

    t = np.array([p.location for p in pulses])
    tau = np.array([p.uncertainty for p in pulses])
    grid = np.where(present, channels, np.inf)
    v = lcs_raw(t[:, None, None], tau[:, None, None], grid[None, :, :])
    v = np.where(present[None], v, 0.0)

    # (a) per (p, q): argmax over k; np.argmax returns the first (lowest k) on ties
    best_k = np.argmax(v, axis=0)
    keep = np.zeros_like(v, dtype=bool)
    np.put_along_axis(keep, best_k[None], True, axis=0)
    v = np.where(keep, v, 0.0)

    # (b) per (k, p): argmax over q, visiting lines in ascending energy
    order = np.argsort(np.where(present, energies, np.inf), axis=1, kind="stable")
    v_sorted = np.take_along_axis(v, order[None], axis=2)
    best_pos = np.argmax(v_sorted, axis=2)
    best_q = order[np.arange(n_el)[None, :], best_pos]
    keep = np.zeros_like(v, dtype=bool)
    np.put_along_axis(keep, best_q[..., None], True, axis=2)
    v = np.where(keep, v, 0.0)
    return Assignment(v, elements, present, energies)


def family_confidence(family_lcs, alpha_lcs):
    """``max(alpha LCS, mean LCS over the family's in-range lines)``; 0 if empty."""
    vals = np.asarray(family_lcs, dtype=float)
    if vals.size == 0:
        return 0.0
    return float(max(alpha_lcs, vals.mean()))


def element_confidence(fcs_k, fcs_l, fcs_m, k_or_l_detected):
    if not k_or_l_detected:
        return 0.0
    return float(max(fcs_k, fcs_l, fcs_m))


def element_scores(assignment: Assignment, pulses=None):
    """Element confidence records for every element in the assignment."""
    scores = assignment.line_scores
    matched = assignment.matched()
    out = {}
    for p, el in enumerate(assignment.elements):
        fcs = {}
        detected_kl = False
        lines = []
        for fam in FAMILIES:
            qs = [q for q, name in enumerate(LINE_NAMES)
                  if assignment.present[p, q] and name in _FAMILY_LINES[fam]]
            vals = [scores[p, q] for q in qs]
            alpha_q = LINE_NAMES.index(ALPHA_LINE[fam])
            alpha = scores[p, alpha_q] if assignment.present[p, alpha_q] else 0.0
            fcs[fam] = family_confidence(vals, alpha)
            if fam in ("K", "L") and any(val > 0 for val in vals):
                detected_kl = True
            for q in qs:
                k = matched.get((p, q))
                lines.append(LineConfidence(
                    el, LINE_NAMES[q], float(assignment.energies[p, q]), float(scores[p, q]),
                    None if (k is None or pulses is None) else pulses[k],
                ))
        lines.sort(key=lambda lc: lc.energy)
        ecs = element_confidence(fcs["K"], fcs["L"], fcs["M"], detected_kl)
        out[el] = ElementConfidence(el, fcs["K"], fcs["L"], fcs["M"], ecs, lines)
    return out


_FAMILY_LINES = {fam: {ln for ln in LINE_NAMES if ALPHA_LINE[fam][0] == ln[0]} for fam in FAMILIES}


@dataclass
class DetectedElementSet:
    elements: list
    average: dict
    maximum: dict
    pulses_average: list = field(default_factory=list)
    pulses_maximum: list = field(default_factory=list)

    def __contains__(self, element):
        return element in self.elements

    def __len__(self):
        return len(self.elements)

    def to_dict(self):
        report = {}
        for el in sorted(set(self.average) | set(self.maximum)):
            avg = self.average.get(el)
            mx = self.maximum.get(el)
            ecs_avg = avg.ecs if avg else 0.0
            ecs_max = mx.ecs if mx else 0.0
            if ecs_avg == 0 and ecs_max == 0:
                continue
            best = avg if ecs_avg >= ecs_max else mx
            report[el] = {
                "ecs_avg": ecs_avg,
                "ecs_max": ecs_max,
                "detected": el in self.elements,
                "lines": best.to_dict()["lines"],
            }
        return {
            "elements": list(self.elements),
            "scores": report,
            "pulses": {
                "average": [p.to_dict() for p in self.pulses_average],
                "maximum": [p.to_dict() for p in self.pulses_maximum],
            },
        }


def detect_elements(cube: Datacube, cfg: WindowConfig | None = None, table=None,
                    diagnostics=None) -> DetectedElementSet:
    """Elements present in either the average or the maximum spectrum."""
    cfg = cfg or WindowConfig()
    cal = cube.calibration
    table = table if table is not None else load_line_table(cal)
    per_source = {}
    pulses_by_source = {}
    for source, spectrum in (("average", average_spectrum(cube)), ("maximum", max_spectrum(cube))):
        pulses = detect_all(spectrum, cfg, source=source, diagnostics=diagnostics)
        pulses_by_source[source] = pulses
        per_source[source] = element_scores(assign_pulses(pulses, table, cal), pulses)
    found = [el for el in table.elements
             if per_source["average"][el].ecs > 0 or per_source["maximum"][el].ecs > 0]
    return DetectedElementSet(found, per_source["average"], per_source["maximum"],
                              pulses_by_source["average"], pulses_by_source["maximum"])
