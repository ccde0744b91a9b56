"""Regenerate ``src/fadxrf/data/lines.json`` from the xraydb line database.

Only needed when the element list or line definitions change; the package
itself reads the JSON and does not import xraydb.

    pip install xraydb
    python tools/make_line_table.py
"""
import json
from pathlib import Path

import xraydb

ELEMENTS = [
    "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Ti", "Cr", "Mn", "Fe",
    "Co", "Ni", "Cu", "Zn", "As", "Se", "Br", "Rb", "Sr", "Zr", "Mo", "Rh",
    "Ag", "Cd", "Sn", "Sb", "I", "Ba", "Au", "Hg", "Pb", "Bi",
]

# canonical line -> xraydb (Siegbahn) component lines
COMPONENTS = {
    "Ka": ["Ka1", "Ka2"],
    "Kb": ["Kb1"],
    "Ll": ["Ll"],
    "La": ["La1"],
    "Lb": ["Lb1"],
    "Lg": ["Lg1"],
    "Ma": ["Ma"],
}


def canonical_energy(lines, names):
    found = [lines[n] for n in names if n in lines and lines[n].energy > 0]
    if not found:
        return None
    weights = [ln.intensity for ln in found]
    total = sum(weights)
    return sum(ln.energy * w for ln, w in zip(found, weights)) / total


def main():
    table = {}
    for el in ELEMENTS:
        lines = xraydb.xray_lines(el)
        entry = {}
        for name, parts in COMPONENTS.items():
            energy = canonical_energy(lines, parts)
            if energy is not None:
                entry[name] = round(energy, 1)
        table[el] = entry
    out = Path(__file__).resolve().parents[1] / "src" / "fadxrf" / "data" / "lines.json"
    payload = {
        "source": f"xraydb {xraydb.__version__} (Elam tables); Ka is the "
                  "intensity-weighted mean of Ka1/Ka2",
        "units": "eV",
        "elements": table,
    }
    out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"wrote {out} ({len(table)} elements)")


if __name__ == "__main__":
    main()
