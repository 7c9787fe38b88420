"""Steady states of the drift-driven segregation setup for several b1.

Runs the exp1 presets (BT for every b1, SKT for the chosen ones), writes
profiles and diagnostics per run and prints the overlap table.

    python scripts/segregation_sweep.py --out runs/segregation
    python scripts/segregation_sweep.py --b1 4 8 --skt 4
"""

import argparse
import logging
import time
from pathlib import Path

from crossdiff.cli import PRESETS, run
from crossdiff.diagnostics import overlap


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--b1", type=float, nargs="+", default=[4, 8, 20, 40])
    ap.add_argument("--skt", type=float, nargs="*", default=[20])
    ap.add_argument("--out", type=Path, default=Path("runs/segregation"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    names = [f"exp1_b{b:g}" for b in args.b1] + [f"exp1_skt_b{b:g}" for b in args.skt]
    print(f"{'run':<16}{'steps':>8}{'overlap':>12}{'min u1':>12}{'min u2':>12}{'seconds':>9}")
    for name in names:
        t0 = time.perf_counter()
        res = run(PRESETS[name], args.out)
        st = res.final
        print(
            f"{name:<16}{st.n:>8}{overlap(st.u1, st.u2):>12.5g}"
            f"{st.u1.values.min():>12.3g}{st.u2.values.min():>12.3g}{time.perf_counter() - t0:>9.1f}"
        )


if __name__ == "__main__":
    main()
