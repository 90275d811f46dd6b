#!/usr/bin/env python3
"""Reduced-scale energy-efficiency trend experiment.

Sweeps the worst-case design over a small SNR grid for several penalty
weights, with the distortion-blind baseline on matched draws, and prints the
energy-efficiency / power / violation comparison.  Emits the full CSV for
external plotting.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from wcslp.cli import write_sweep_csv  # noqa: E402
from wcslp.simulator import DistortionSpec, SweepConfig, run_sweep  # noqa: E402
from wcslp.solver import SolverConfig  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="ee_trends.csv")
    parser.add_argument("--blocks", type=int, default=50)
    parser.add_argument("--symbols", type=int, default=100)
    parser.add_argument("--seed", type=int, default=20260809)
    parser.add_argument("--parallel", type=int, default=2)
    args = parser.parse_args()

    config = SweepConfig(
        n_t=8, n_r=8, gamma_db_grid=(4.0, 8.0, 12.0, 16.0),
        beta_grid=(1.0, 100.0, 1e4), blocks=args.blocks,
        symbols_per_block=args.symbols, seed=args.seed,
        schemes=("wc-slp", "nominal-slp", "nominal-under-distortion"),
        mi_bins=16, parallel=args.parallel,
        distortion=DistortionSpec(sigma_w_sq=0.02, epsilon=0.56),
        solver=SolverConfig(max_iterations=4000, outer_tol=1e-3))
    records = run_sweep(config)
    write_sweep_csv(config, records, args.out)

    print(f"{'gamma':>6} {'beta':>8} {'scheme':>26} {'power':>9} {'ber':>8} "
          f"{'mi':>6} {'ee':>10} {'viol':>6}")
    for r in records:
        print(f"{r.gamma_db:6.1f} {r.beta:8g} {r.scheme:>26} "
              f"{r.mean_power:9.2f} {r.ber:8.4f} {r.mi_bits_per_user:6.3f} "
              f"{r.energy_efficiency:10.3e} {r.ci_violation_rate:6.3f}")
    print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
