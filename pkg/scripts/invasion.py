"""Invasion of a resident species under Lotka-Volterra competition.

Runs the exp3 preset and prints the species masses at the snapshot times.

    python scripts/invasion.py --out runs/invasion
"""

import argparse
import logging
from pathlib import Path

from crossdiff.cli import PRESETS, run
from crossdiff.diagnostics import mass


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/invasion"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    res = run(PRESETS["exp3"], args.out)
    for rec in res.final.history:
        if rec.n % 1000 == 0:
            print(f"t={rec.t:5.2f}  mass1={rec.mass1:.5f}  mass2={rec.mass2:.5f}  overlap={rec.overlap:.5f}")
    st = res.final
    print(f"final t={st.t:g}: mass1={mass(st.u1):.5f} mass2={mass(st.u2):.5f}")


if __name__ == "__main__":
    main()
