"""Contact-inhibition runs for delta in {0, 1e-3, 1e-2}.

Reports the delta-scaled space-time gradient, the minimum nodal values and
the total variation at the final time, plus the gap between the coupled sum
u1 + u2 and the scalar aggregate solve.

    python scripts/contact_inhibition.py            # M=401, tau=1e-4
    python scripts/contact_inhibition.py --full     # M=1001, tau=1e-5 (slow)
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from crossdiff.cli import PRESETS, build_problem, run
from crossdiff.diagnostics import delta_scaling_probe, solve_aggregate, total_variation


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--full", action="store_true", help="published resolution instead of the CI-scaled one")
    ap.add_argument("--out", type=Path, default=Path("runs/contact"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    prefix = "exp2" if args.full else "exp2ci"
    finals = {}
    for delta in (0.0, 1e-3, 1e-2):
        cfg = PRESETS[f"{prefix}_delta{delta:g}"]
        t0 = time.perf_counter()
        st = run(cfg, args.out).final
        finals[delta] = st
        tv = total_variation(st.u1) + total_variation(st.u2)
        print(
            f"delta={delta:<6g} t={st.t:.3f} min=({st.u1.values.min():.3g}, {st.u2.values.min():.3g}) "
            f"TV={tv:.4g} [{time.perf_counter() - t0:.0f}s]"
        )
        if delta:
            prob = build_problem(cfg)
            agg = solve_aggregate(prob.initial[0] + prob.initial[1], prob.coeffs, delta, prob.params).final
            gap = np.max(np.abs(st.u1.values + st.u2.values - agg.values))
            print(f"  |u1 + u2 - aggregate|_max = {gap:.3e}")

    print("delta * sum_i ||grad u_i||^2 over (0, t):")
    for delta, product in delta_scaling_probe({d: s for d, s in finals.items() if d}):
        print(f"  {delta:<8g}{product:.5g}")


if __name__ == "__main__":
    main()
