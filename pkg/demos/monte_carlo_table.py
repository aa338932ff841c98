"""Small Monte Carlo rejection table for the Clayton design.

Uses R = 20 replications so it runs in well under a minute; the full tables
use R = 100 or more (see ``condcop mc``).
"""

from condcop import BootstrapTest, DgpSpec, make_statistic, mc_rejection

R = 20
stats = [make_statistic(s) for s in ("I_chi", "I_2n")]
test = BootstrapTest(stats, "bootNP", n_boot=100)

print(f"{'tau_max':>8s} {'stat':>8s} {'rate':>6s}")
for tau_max in (0.0, 1.0):
    for cell in mc_rejection(DgpSpec("clayton", 300, tau_max=tau_max), test, reps=R, seed=5):
        print(f"{tau_max:8.1f} {cell.stat_id:>8s} {cell.rate:6.2f}")
