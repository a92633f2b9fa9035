"""Degradation as colocation records go missing, with attribution shifting to later steps.

    python3 scripts/colo_ablation.py --seeds 3 --fractions 0 0.1 0.3 0.5
"""
from __future__ import annotations

import argparse
from collections import Counter

from rpinfer.inference import run_pipeline
from rpinfer.synth import SynthConfig, generate
from rpinfer.validation import compute_metrics

STEPS = ("PortCapacity", "RttColo", "MultiIxp", "PrivateVoting", "None")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    ap.add_argument("--n-ixps", type=int, default=15)
    args = ap.parse_args()

    print(f"{'missing':>7} {'ACC':>7} {'COV':>7} " + " ".join(f"{s:>13}" for s in STEPS))
    for frac in args.fractions:
        cfg = SynthConfig(n_ixps=args.n_ixps, missing_colo_fraction=frac)
        hits = covered = labelled = 0
        steps = Counter()
        for seed in range(args.seeds):
            s = generate(cfg, seed)
            out = run_pipeline(s.world, s.measurements)
            m = compute_metrics(out.verdicts(), s.ground_truth)
            hits += m.acc.num
            covered += m.acc.den
            labelled += m.cov.den
            steps.update(r.step.value for r in out.results)
        total = sum(steps.values())
        print(f"{frac:7.2f} {hits / covered:7.4f} {covered / labelled:7.4f} "
              + " ".join(f"{steps[s] / total:13.3f}" for s in STEPS))


if __name__ == "__main__":
    main()
