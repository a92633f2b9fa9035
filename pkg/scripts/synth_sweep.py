"""Accuracy and coverage of the pipeline against generator ground truth over many seeds.

    python3 scripts/synth_sweep.py --seeds 20
    python3 scripts/synth_sweep.py --seeds 5 --set remote_fraction=0.4 --set jitter_mean_ms=0.5
"""
from __future__ import annotations

import argparse
import ast
import dataclasses
import statistics
import time

from rpinfer.inference import run_pipeline
from rpinfer.synth import SynthConfig, generate
from rpinfer.validation import compute_metrics, per_step_metrics


def parse_overrides(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, _, raw = item.partition("=")
        try:
            out[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            out[key] = raw
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="SynthConfig override")
    args = ap.parse_args()
    cfg = dataclasses.replace(SynthConfig(), **parse_overrides(args.set))

    print(f"{'seed':>4} {'ifaces':>6} {'remote':>6} {'ACC':>7} {'COV':>7} {'FPR':>7} {'FNR':>7} {'step1 PRE':>9} {'sec':>5}")
    accs, covs = [], []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        t0 = time.perf_counter()
        s = generate(cfg, seed)
        out = run_pipeline(s.world, s.measurements)
        m = compute_metrics(out.verdicts(), s.ground_truth)
        step1 = per_step_metrics(out.results, s.ground_truth)["PortCapacity"].pre.value
        remote = sum(v == "Remote" for v in s.ground_truth.values()) / len(s.ground_truth)
        accs.append(m.acc.value)
        covs.append(m.cov.value)
        fmt = lambda x: f"{x:7.4f}" if x is not None else "      -"  # noqa: E731
        print(f"{seed:>4} {len(s.ground_truth):>6} {remote:6.2f} {fmt(m.acc.value)} {fmt(m.cov.value)} "
              f"{fmt(m.fpr.value)} {fmt(m.fnr.value)} {fmt(step1):>9} {time.perf_counter() - t0:5.1f}")
    print(f"mean ACC {statistics.mean(accs):.4f} (min {min(accs):.4f}), mean COV {statistics.mean(covs):.4f} (min {min(covs):.4f})")


if __name__ == "__main__":
    main()
