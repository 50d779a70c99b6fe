"""One test per acceptance criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` (the lines are also shown without ``-s``).
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from gradcases import check_loss, random_case, trunk_check
from mdmt.cli import main
from mdmt.config import build_tasks, flatten, from_dict
from mdmt.losses import MarginConfig, TaskHead, cds_loss, ed_loss, grad_check, tam_loss
from mdmt.metrics import average_accuracy, emit_matrix, forgetting, ltr, parse_matrix, read_matrix
from mdmt.trainer import HyperParams, LossMode, train_sequence

ROOT = Path(__file__).resolve().parents[1]
FIX = Path(__file__).parent / "fixtures"
DESK = ROOT / "configs" / "desk_permuted.json"
DESK_SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail

    return emit


def desk_config(seed):
    raw = flatten(json.loads(DESK.read_text()))
    raw.update({"data.seed": seed, "hp.seed": seed})
    return from_dict(raw)


_desk_cache = {}


def desk_run(seed, mode, use_ed):
    key = (seed, mode, use_ed)
    if key not in _desk_cache:
        cfg = desk_config(seed)
        hp = HyperParams(**{**cfg.hp.__dict__, "loss_mode": mode, "use_ed": use_ed})
        m, _, _ = train_sequence(build_tasks(cfg.data), hp, cfg.hidden)
        _desk_cache[key] = m
    return _desk_cache[key]


def eval_a_t(path, capsys):
    capsys.readouterr()
    assert main(["eval-matrix", str(path)]) == 0
    out = capsys.readouterr().out
    return float(out.split("A_T:")[1].split()[0])


def test_c1_average_accuracy(report, capsys):
    t0 = time.perf_counter()
    mdmt = eval_a_t(FIX / "perm_mnist_mdmt_r.txt", capsys)
    agem = eval_a_t(FIX / "perm_mnist_agem.txt", capsys)
    mega = eval_a_t(FIX / "perm_mnist_mega.txt", capsys)
    dt = time.perf_counter() - t0
    ok = abs(mdmt - 0.9433) <= 0.0005 and abs(agem - 0.8932) <= 0.0005 and abs(mega - 0.9121) <= 0.01 and dt < 1
    report(1, ok, f"A_17 MDMT-R {mdmt:.4f}, A-GEM {agem:.4f}, MEGA {mega:.4f} in {dt:.3f}s")


def test_c2_ltr(report):
    v = ltr(read_matrix(FIX / "perm_mnist_mdmt_r.txt"))
    report(2, abs(v - 0.247) <= 0.010, f"LTR {v:.4f} (target 0.247 +- 0.010)")


def test_c3_forgetting(report):
    v = forgetting(read_matrix(FIX / "perm_mnist_mdmt_r.txt"))
    report(3, abs(v - 0.023) <= 0.005, f"F_17 {v:.4f} (target 0.023 +- 0.005)")


def test_c4_gradient_suite(report):
    t0 = time.perf_counter()
    worst = {}
    seeds = range(20)
    cfg = MarginConfig(0.2, 0.3, 4.0)
    worst["tam"] = max(check_loss(tam_loss, *random_case(s), 1, False, cfg=cfg) for s in seeds)
    worst["cds"] = max(check_loss(cds_loss, *random_case(s), 1, True) for s in seeds)

    def ed_err(seed):
        rng = np.random.default_rng(seed)
        cur, ref = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))

        def fn(cur):
            r = ed_loss(cur, ref)
            return r.value, {"cur": r.feature_grad}

        return grad_check(fn, {"cur": cur})

    worst["ed"] = max(ed_err(s) for s in seeds)
    worst["trunk"] = max(trunk_check(s) for s in seeds)
    dt = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, ok, f"max relative error over 20 instances: {detail}; {dt:.1f}s")


def test_c5_reductions(report):
    errs = []
    for seed in range(5):
        x, y, heads = random_case(seed, sizes=(5,), k=0)
        r = tam_loss(x, y, heads, 0, MarginConfig(0.35, 0.0, 16.0))
        errs.append(abs(r.value - oracles.arcface(x.tolist(), y.tolist(), heads[0].weight.tolist(), 0.35, 16.0)))
        x, y, heads = random_case(seed)
        r = tam_loss(x, y, heads, 1, MarginConfig(0.0, 0.0, 7.0))
        expected = oracles.cosine_softmax(x.tolist(), y.tolist(), [h.weight.tolist() for h in heads],
                                          heads[0].num_classes, 7.0)
        errs.append(abs(r.value - expected))
        x, y, heads = random_case(seed, sizes=(4,), k=0)
        r = cds_loss(x, y, heads, 0)
        errs.append(abs(r.value - oracles.softmax_ce(x.tolist(), y.tolist(), heads[0].weight.tolist(),
                                                      heads[0].bias.tolist())))
    worst = max(errs)
    report(5, worst <= 1e-12, f"ArcFace / cosine softmax / softmax CE max deviation {worst:.1e}")


def test_c6_desk_forgetting(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    for seed in DESK_SEEDS:
        van = desk_run(seed, LossMode.VANILLA, False)
        mdmt = desk_run(seed, LossMode.TAM, True)
        a_v, a_m = average_accuracy(van), average_accuracy(mdmt)
        f_v, f_m = forgetting(van), forgetting(mdmt)
        ok &= a_m >= a_v + 0.05 and f_m < f_v
        lines.append(f"seed {seed}: A {a_m:.4f} vs {a_v:.4f}, F {f_m:.4f} vs {f_v:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    report(6, ok, "; ".join(lines) + f" ({dt:.1f}s)")


def test_c7_ed_ablation(report):
    lines, ok = [], True
    for seed in DESK_SEEDS:
        with_ed = ltr(desk_run(seed, LossMode.TAM, True))
        without = ltr(desk_run(seed, LossMode.TAM, False))
        ok &= with_ed <= without
        lines.append(f"seed {seed}: LTR {with_ed:.4f} (ED) vs {without:.4f} (no ED)")
    report(7, ok, "; ".join(lines))


def test_c8_determinism(report, tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["train", "--config", str(DESK), "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "matrix.csv").read_bytes()
    b = (tmp_path / "b" / "matrix.csv").read_bytes()
    report(8, a == b, f"matrix.csv identical across two runs ({len(a)} bytes)")


def test_c9_matrix_plumbing(report):
    names = [f"{bench}_{method}" for bench in ("perm_mnist", "split_cifar")
             for method in ("mdmt_r", "mega", "agem")]
    ok = True
    for name in names:
        m = read_matrix(FIX / f"{name}.txt")
        again = parse_matrix(emit_matrix(m), name)
        ok &= m.a.shape == (17, 17) and again == m
    report(9, ok, f"{len(names)} matrices parse as 17x17 and round-trip")
