"""Compare rehearsal modes on the desk-scale permuted synthetic benchmark.

Runs VANILLA, TAM + ED, TAM without ED and raw cross-domain softmax (with ED)
for several seeds and prints A_T, F_T and LTR per run plus seed means.

    python scripts/desk_experiment.py --seeds 0 1 2
"""
import argparse
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from mdmt.config import build_tasks, flatten, from_dict
from mdmt.metrics import average_accuracy, forgetting, lca, ltr
from mdmt.trainer import LossMode, train_sequence

ROOT = Path(__file__).resolve().parents[1]
VARIANTS = {
    "vanilla": dict(loss_mode=LossMode.VANILLA, use_ed=False),
    "tam+ed": dict(loss_mode=LossMode.TAM, use_ed=True),
    "tam": dict(loss_mode=LossMode.TAM, use_ed=False),
    "cds+ed": dict(loss_mode=LossMode.CDS_RAW, use_ed=True),
}


def load_seeded(path, seed):
    raw = flatten(json.loads(Path(path).read_text()))
    raw.update({"data.seed": seed, "hp.seed": seed})
    return from_dict(raw)


def run(path, seed, variant):
    cfg = load_seeded(path, seed)
    hp = dataclasses.replace(cfg.hp, **VARIANTS[variant])
    m, curve, _ = train_sequence(build_tasks(cfg.data), hp, cfg.hidden)
    return dict(A=average_accuracy(m), F=forgetting(m), LTR=ltr(m), LCA=lca(curve))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "desk_permuted.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = ap.parse_args()

    rows = {v: [] for v in args.variants}
    print(f"{'variant':8s} {'seed':>4s} {'A_T':>7s} {'F_T':>7s} {'LTR':>7s} {'LCA':>7s}")
    for seed in args.seeds:
        for v in args.variants:
            t0 = time.time()
            r = run(args.config, seed, v)
            rows[v].append(r)
            print(f"{v:8s} {seed:4d} {r['A']:7.4f} {r['F']:7.4f} {r['LTR']:7.4f} {r['LCA']:7.4f}"
                  f"  ({time.time() - t0:.1f}s)", flush=True)
    print()
    for v, rs in rows.items():
        means = {k: np.mean([r[k] for r in rs]) for k in ("A", "F", "LTR", "LCA")}
        print(f"{v:8s} mean {means['A']:7.4f} {means['F']:7.4f} {means['LTR']:7.4f} {means['LCA']:7.4f}")


if __name__ == "__main__":
    main()
