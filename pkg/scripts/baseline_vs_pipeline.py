"""RTT-threshold baseline against the full pipeline as wide-area IXPs spread further apart.

    python3 scripts/baseline_vs_pipeline.py --seeds 3 --spreads 0 500 1000 1500
"""
from __future__ import annotations

import argparse

from rpinfer.config import PipelineConfig
from rpinfer.inference import run_pipeline
from rpinfer.synth import SynthConfig, generate
from rpinfer.validation import compute_metrics


def pooled(pairs):
    num = sum(r.num for r in pairs)
    den = sum(r.den for r in pairs)
    return num / den if den else float("nan")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--n-ixps", type=int, default=10)
    ap.add_argument("--spreads", type=float, nargs="+", default=[0.0, 500.0, 1000.0, 1500.0],
                    help="minimum km between a wide-area IXP's home metro and its other metros")
    ap.add_argument("--threshold-ms", type=float, default=10.0)
    args = ap.parse_args()
    pcfg = PipelineConfig(baseline_threshold_ms=args.threshold_ms)

    print(f"{'spread km':>9} {'base FPR':>8} {'base FNR':>8} {'pipe FPR':>8} {'pipe FNR':>8} {'pipe ACC':>8}")
    for spread in args.spreads:
        cfg = SynthConfig(n_ixps=args.n_ixps, wide_area_fraction=1.0, wide_area_min_km=spread)
        rows = {k: [] for k in ("bfpr", "bfnr", "pfpr", "pfnr", "pacc")}
        for seed in range(args.seeds):
            s = generate(cfg, seed)
            out = run_pipeline(s.world, s.measurements, pcfg)
            b = compute_metrics(out.baseline, s.ground_truth)
            p = compute_metrics(out.verdicts(), s.ground_truth)
            rows["bfpr"].append(b.fpr)
            rows["bfnr"].append(b.fnr)
            rows["pfpr"].append(p.fpr)
            rows["pfnr"].append(p.fnr)
            rows["pacc"].append(p.acc)
        print(f"{spread:9.0f} " + " ".join(f"{pooled(rows[k]):8.3f}" for k in rows))


if __name__ == "__main__":
    main()
