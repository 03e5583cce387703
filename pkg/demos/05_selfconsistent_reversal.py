"""
Self-consistent reversal: the drift estimated from the live cloud
=================================================================
When no closed-form density is available, each step rebuilds a kernel
estimate from the current ensemble and uses its score as the reversal
drift.  The reversed dynamics is an anti-diffusion, so the kernel must
oversmooth to stay stable; the known first-order smoothing bias is
cancelled by a moment-matched rescale.  The run is compared against the
exact-drift reference on the heat benchmark, where both should collapse
the standard normal cloud to a point source.
"""

from retrodiff import (
    TimeGrid,
    dirac,
    gaussian,
    simulate_reversal_analytic,
    simulate_reversal_selfconsistent,
    wasserstein1,
)
from retrodiff.models import heat_model

heat = heat_model(dim=1)
grid = TimeGrid(0.0, 1.0, 1000)
kw = dict(n=20000, epsilon_stop=1e-2, seed=6)

sc = simulate_reversal_selfconsistent(heat, gaussian(0.0, 1.0), grid, **kw)
an = simulate_reversal_analytic(heat, dirac([0.0]), gaussian(0.0, 1.0),
                                grid, **kw)

for name, run in (("self-consistent", sc), ("analytic drift", an)):
    X = run.terminal.positions
    d = run.diagnostics
    print(f"{name:16s} terminal mean {X.mean():+.4f} std {X.std():.4f} "
          f"clips {d.clips.sum()} vacuums {d.vacuums.sum()} "
          f"wall {d.wall_time:.1f}s")

w1 = wasserstein1(sc.terminal.positions, an.terminal.positions)
print(f"\nterminal Wasserstein-1 between the modes: {w1:.4f}")

print("\nmid-run marginals track the exact variance 1 - t:")
for snap in sc.path.snapshots[25:176:50]:
    print(f"  t={snap.time:.2f}  var={snap.positions.var():.4f} "
          f" exact={1.0 - snap.time:.4f}")
