"""Rebuild the golden metrics CSVs (one per shipped config, at its own seed) and
the committed MountainCar logs (three seeds per algorithm).

    python3 golden/regenerate.py            # everything
    python3 golden/regenerate.py chainworld_a2c cartpole_a2c

Goldens are byte-exact regression targets: only regenerate after an
intentional change to training behaviour.
"""
import argparse
import shutil
import tempfile
import time
from pathlib import Path

from qra2c.harness import load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
GOLDEN = ROOT / "golden"
RESULTS = ROOT / "results" / "mountaincar"
MOUNTAINCAR_SEEDS = (0, 1, 2)


def run(name, seed=None, out=None):
    overrides = {} if seed is None else {"seed": str(seed)}
    cfg = load_config(CONFIGS / f"{name}.cfg", overrides)
    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        res = run_experiment(cfg, Path(tmp) / "run")
        shutil.copyfile(Path(tmp) / "run" / "metrics.csv", out)
    print(f"{name} seed={cfg.seed}: first solve {res['first_solve_update']} "
          f"({time.perf_counter() - t0:.0f}s) -> {out.relative_to(ROOT)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help="config names (default: all in configs/)")
    args = ap.parse_args()
    names = args.names or sorted(p.stem for p in CONFIGS.glob("*.cfg"))
    for name in names:
        run(name, out=GOLDEN / f"{name}.csv")
        if name.startswith("mountaincar"):
            RESULTS.mkdir(parents=True, exist_ok=True)
            for s in MOUNTAINCAR_SEEDS:
                run(name, s, RESULTS / f"{name}_seed{s}.csv")


if __name__ == "__main__":
    main()
