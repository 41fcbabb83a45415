"""Direct two-scale solve against the asymptotic wavepacket (Mathieu scenario).

Runs the built-in scenario at a reduced horizon so it finishes in a minute
or two and prints the corrector norms with and without the sqrt(eps) term.
Use ``python -m blochpacket validate mathieu-1d`` for the full sweep.
"""
import sys

from blochpacket.harness.config import resolve
from blochpacket.harness.validation import run_validation

horizon = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
cfg = resolve({"scenario": "mathieu-1d", "run": {"horizon": horizon, "checkpoints": [horizon]}})
res = run_validation(cfg)
print("eps        ||psi - psi~||   leading only   expansion residual")
for r in res.records:
    print(f"{r['epsilon']:<9.6f}  {r['corrector']:.4e}      {r['corrector_leading']:.4e}     "
          f"{r['expansion_residual']:.3e}")
for name, fit in res.slopes.items():
    print(f"slope {name}: {fit.slope:.3f}  (95% CI {fit.ci_low:.2f} .. {fit.ci_high:.2f})")
