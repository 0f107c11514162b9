"""
QR-A2C versus A2C on CartPole
=============================

Trains both actor-critic variants for a few hundred updates with the shipped
classic-control preset and writes a learning-curve SVG. A full run to the
2160-update budget is what ``configs/cartpole_qra2c.cfg`` does; this demo
keeps it short.

    python3 demos/cartpole_qr_a2c.py --updates 480
"""

import argparse
import tempfile
from pathlib import Path

from qra2c.harness import load_config, run_experiment
from qra2c.plotting import emit_plot

root = Path(__file__).resolve().parent.parent
ap = argparse.ArgumentParser()
ap.add_argument("--updates", type=int, default=480)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="cartpole_demo.svg")
args = ap.parse_args()

work = Path(tempfile.mkdtemp(prefix="qra2c_demo_"))
csvs, labels = [], []
for preset in ("cartpole_qra2c", "cartpole_a2c"):
    cfg = load_config(root / "configs" / f"{preset}.cfg",
                      {"total_updates": str(args.updates), "seed": str(args.seed)})
    res = run_experiment(cfg, work / preset)
    print(f"{preset}: first solve at update {res['first_solve_update']}, "
          f"final mean {res['final']['mean_test_reward']:.1f}")
    csvs.append(work / preset / "metrics.csv")
    labels.append(cfg.agent.algo)

###############################################################################
# Each CSV row is one greedy evaluation of 20 episodes; the plot shows the
# mean test reward against the update index.

emit_plot(csvs, args.out, labels, title="CartPole")
print("wrote", args.out)
