"""Show how the K/L line ratio caps recover a weak Zn Kb map buried under Cu Kb.

Cu Kb (8905 eV) and Zn Ka (8639 eV) sit within a detector FWHM of each other,
so without the caps the solver can hand Zn Kb intensity to its neighbours.

Run: python demos/cu_zn_constraint.py
"""
from fadxrf.solvers import SolverConfig, solve
from fadxrf.synthetic import map_correlation, preset, render_cube, truth_pulse_matrix

scene = preset("cu_zn_overlap", noise="poisson", seed=0)
cube, truth = render_cube(scene)
S = truth_pulse_matrix(scene)

print(f"true Zn Kb peak {truth.get('Zn', 'Kb').max():.2f} counts per pixel")
for name in ("admm", "fista"):
    r = {}
    for physical in (False, True):
        maps, _ = solve(cube, S, name, SolverConfig(iters=50, physical_constraint=physical))
        r[physical] = {key: map_correlation(maps.get(*key), truth.get(*key))
                       for key in (("Zn", "Kb"), ("Cu", "Ka"))}
    print(f"{name}:")
    for key in (("Zn", "Kb"), ("Cu", "Ka")):
        print(f"  {key[0]} {key[1]} r  unconstrained {r[False][key]:.3f}  constrained {r[True][key]:.3f}")
