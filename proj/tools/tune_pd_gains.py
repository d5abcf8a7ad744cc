#!/usr/bin/env python3
"""Grid search for the biped PD gains.

Each candidate scales a base gain profile (hip/knee/ankle per leg) and sets
kd = ratio * kp. A candidate is scored by max |eta2| over a nominal-clock
walk; failed walks score inf. The best row is printed and, with --write,
stored into the config.
"""

import argparse
import csv
import json
import math
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
BASE_KP = [3000, 3000, 3000, 300, 300, 30]


def run(cli, config, kp, kd, steps, out):
    cmd = [
        str(cli), "pd-bench", "-c", str(config), "-o", str(out),
        "--set", "pd_bench.clock_scales=[1.0]",
        "--set", f"pd_bench.steps={steps}",
        "--set", f"controller.kp={json.dumps(kp)}",
        "--set", f"controller.kd={json.dumps(kd)}",
    ]
    rc = subprocess.run(cmd, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL).returncode
    if rc == 1:
        sys.exit(f"config error running: {' '.join(cmd)}")
    with open(Path(out) / "pd_walk.csv", newline="") as f:
        row = next(csv.DictReader(f))
    if row["failure"] != "-" or int(row["cycles"]) < steps:
        return math.inf, row
    return float(row["eta2_max"]), row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cli", default=ROOT / "build" / "isswalk")
    ap.add_argument("--config", default=ROOT / "configs" / "pd_walk.json")
    ap.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.01, 0.02, 0.04])
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--table", help="write the full grid as CSV here")
    ap.add_argument("--write", action="store_true", help="store the best gains in --config")
    a = ap.parse_args()

    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for s in a.scales:
            for r in a.ratios:
                kp = [s * g for g in BASE_KP]
                kd = [r * g for g in kp]
                score, raw = run(a.cli, a.config, kp, kd, a.steps, tmp)
                rows.append({"scale": s, "ratio": r, "eta2_max": score,
                             "cycles": raw["cycles"], "failure": raw["failure"]})
                print(f"scale {s:g} ratio {r:g}: max|eta2| {score:.6g} ({raw['cycles']} cycles)")

    if a.table:
        with open(a.table, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    best = min(rows, key=lambda r: r["eta2_max"])
    if math.isinf(best["eta2_max"]):
        sys.exit("no candidate completed the walk")
    kp = [best["scale"] * g for g in BASE_KP]
    kd = [best["ratio"] * g for g in kp]
    print(f"best: kp={json.dumps(kp)} kd={json.dumps(kd)} max|eta2| {best['eta2_max']:.6g}")
    if a.write:
        cfg = json.loads(Path(a.config).read_text())
        cfg.setdefault("controller", {}).update({"kp": kp, "kd": kd})
        Path(a.config).write_text(json.dumps(cfg, indent=2) + "\n")


if __name__ == "__main__":
    main()
