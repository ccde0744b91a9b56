"""Time ADMM and FISTA on a 128x128x2048 Poisson shapes cube and print MSE traces.

Run: python demos/solver_timing.py
"""
from fadxrf.solvers import SolverConfig, admm_solve, fista_solve
from fadxrf.synthetic import preset, render_cube, truth_pulse_matrix

scene = preset("shapes", height=128, width=128, channels=2048, noise="poisson", seed=0)
cube, _ = render_cube(scene)
S = truth_pulse_matrix(scene)
cfg = SolverConfig(iters=50)

traces = {}
for name, fn in (("admm", admm_solve), ("fista", fista_solve)):
    _, traces[name] = fn(cube, S, cfg)
    t = traces[name]
    print(f"{name:5s}: setup {t.setup_ms:6.1f} ms, 50 iterations {t.total_ms - t.setup_ms:6.1f} ms, "
          f"MSE(50)/MSE(1) {t.mse[-1] / t.mse[0]:.3f}")

print("\niter   ADMM MSE       FISTA MSE")
for i in (0, 1, 4, 9, 19, 49):
    print(f"{i + 1:4d}   {traces['admm'].mse[i]:.4e}   {traces['fista'].mse[i]:.4e}")
