"""Run every shipped config and print one status line each.

    python scripts/run_all_experiments.py --out runs --threads 4
"""
import argparse
import sys
from pathlib import Path

from hermite_flow.harness import ExperimentConfig, run

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default=ROOT / "configs", type=Path)
    ap.add_argument("--out", default="runs", type=Path)
    ap.add_argument("--threads", type=int)
    args = ap.parse_args()

    worst = 0
    for path in sorted(args.configs.glob("*.toml")):
        cfg = ExperimentConfig.load(path).with_overrides(out=str(args.out / path.stem), threads=args.threads)
        rep = run(cfg)
        print(f"{path.stem:24s} {rep.status:5s} {rep.wall_clock:7.2f}s  {rep.out_dir}")
        for d in rep.diagnostics:
            print(f"    {d}")
        # mono_check_violation is the negative control and is expected to FAIL
        if path.stem != "mono_check_violation":
            worst = max(worst, rep.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
