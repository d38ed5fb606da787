"""Acceptance criteria, one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".  ``python tests/test_acceptance.py``
does the same.
"""

import dataclasses
import itertools
import statistics
import sys
import time
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import checks  # noqa: E402
from ccl_pad.catalog import (  # noqa: E402
    PROTOCOL_IDS,
    Attributes,
    Lighting,
    SampleType,
    Scene,
    Sensor,
    Skin,
    SynthConfig,
    build_protocol_split,
    decode_folder_name,
    encode_folder_name,
    synth_catalog,
)
from ccl_pad.cgd import decay_pd  # noqa: E402
from ccl_pad.evaluation import acer, run_protocol  # noqa: E402
from ccl_pad.model import ModelConfig, save_checkpoint, tau_schedule  # noqa: E402
from ccl_pad.trainer import TrainConfig, lr_at_epoch, train  # noqa: E402

RESULTS: list[str] = []


def record(criterion: str, ok: bool, detail: str, soft: bool = False) -> None:
    status = "PASS" if ok else ("WARN" if soft else "FAIL")
    line = f"{status} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)


def test_criterion_1_cgd_oracle():
    t0 = time.perf_counter()
    bad = checks.cgd_mismatches(1000, seed=0)
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 10
    record("1", ok, f"CGD vs brute force, {bad}/1000 mismatching batches in {dt:.2f}s (limit 10s)")
    assert ok


def test_criterion_2_schedules():
    S, base = 3000, 0.996
    errs = [
        abs(tau_schedule(0, S, base) - 0.996),
        abs(tau_schedule(S, S, base) - 1.0),
        abs(tau_schedule(S // 2, S, base) - 0.998),
        abs(decay_pd(0.15, 0, 30) - 0.15),
        abs(decay_pd(0.15, 7.5, 30) - 0.075),
        abs(decay_pd(0.15, 15, 30) - 0.0),
        abs(decay_pd(0.15, 29, 30) - 0.0),
    ]
    lrs = [lr_at_epoch(e, 0.01, (15, 21, 26), 0.2) for e in (0, 14, 15, 20, 21, 25, 26, 29)]
    lr_ok = lrs == [0.01, 0.01, 0.002, 0.002, 0.0004, 0.0004, 0.00008, 0.00008]
    ok = max(errs) <= 1e-15 and lr_ok
    record("2", ok, f"tau/p_d max error {max(errs):.1e} (limit 1e-15), lr sequence {sorted(set(lrs), reverse=True)}")
    assert ok


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    runs = [checks.gradient_check(seed, act) for seed, act in ((0, "tanh"), (1, "tanh"), (2, "relu"))]
    dt = time.perf_counter() - t0
    rel = max(r[0] for r in runs)
    prime = max(r[1] for r in runs)
    ok = rel < 1e-4 and prime == 0.0 and dt < 30
    record("3", ok, f"max rel error {rel:.1e} (limit 1e-4), max |dL/dtheta'| {prime}, {dt:.2f}s (limit 30s)")
    assert ok


def test_criterion_4_metrics():
    problems = checks.metric_mismatches(200, seed=0)
    rows = acer(3.7, 5.7) == 4.7 and acer(1.8, 3.0) == 2.4
    ok = not problems and rows
    record("4", ok, f"{len(problems)} metric mismatches over 200 score sets, ACER rows exact: {rows}")
    assert ok, problems[:5]


def test_criterion_5_protocols(full_catalog):
    expected = {
        "P1": ({1, 2, 3}, {1, 2, 3}),
        "P2_1": ({2, 3}, {1}),
        "P2_2": ({1, 3}, {2}),
        "P2_3": ({1, 2}, {3}),
        "P3": ({1, 3}, {1, 2, 3}),
    }
    failures = []
    for pid in PROTOCOL_IDS:
        s = build_protocol_split(pid, full_catalog, 0)
        sizes = (len(s.train), len(s.dev), len(s.test))
        train_types, test_types = expected[pid]
        disjoint = not (s.train & s.dev or s.train & s.test or s.dev & s.test)
        if sizes != (45, 6, 24) or not disjoint:
            failures.append(f"{pid} sizes {sizes}")
        if set(s.train_mask_types) != train_types or set(s.test_mask_types) != test_types:
            failures.append(f"{pid} mask types {sorted(s.train_mask_types)}/{sorted(s.test_mask_types)}")
        test_rows = s.apply(full_catalog, "test")
        if set(test_rows.attrs[:, 2].tolist()) - {0} != test_types:
            failures.append(f"{pid} test rows")
    ok = not failures
    record("5", ok, f"45/6/24 splits and mask filters for {', '.join(PROTOCOL_IDS)}" + ("" if ok else f": {failures}"))
    assert ok


# Synthetic regime for the direction-of-effect experiments: 75 subjects, d=64,
# desk-scale model, with context-dependent distortion of the material signal.
EFFECT_DATA = SynthConfig(context_weight=2.0, subject_weight=2.0, interaction=1.5)
EFFECT_SEEDS = (0, 1, 2)
FULL = TrainConfig(steps_per_epoch=100)
ARMS = {
    "full": FULL,
    "baseline": dataclasses.replace(FULL, lambda_con=0.0, cgd_variant="off"),
    "pattern5": dataclasses.replace(FULL, patterns=(5,)),
}


@pytest.fixture(scope="module")
def effect_runs():
    t0 = time.perf_counter()
    catalog = synth_catalog(EFFECT_DATA, seed=7)
    split = build_protocol_split("P1", catalog, 0)
    acers, logs = {}, {}
    for name, cfg in ARMS.items():
        for seed in EFFECT_SEEDS:
            state, log = train(catalog, split, dataclasses.replace(cfg, seed=seed))
            acers[name, seed] = run_protocol(state.net, catalog, "P1").acer
            logs[name, seed] = log
    # The no-CGD arm only feeds the first-3-epoch comparison.
    no_cgd = dataclasses.replace(FULL, cgd_variant="off")
    for seed in EFFECT_SEEDS:
        _, logs["no_cgd", seed] = train(catalog, split, dataclasses.replace(no_cgd, seed=seed), stop_after_epochs=3)
    return acers, logs, time.perf_counter() - t0


def _median(acers, arm):
    return statistics.median(acers[arm, s] for s in EFFECT_SEEDS)


def test_criterion_6a_ccl_beats_baseline(effect_runs):
    acers, _, dt = effect_runs
    full, base = _median(acers, "full"), _median(acers, "baseline")
    ok = full <= base and dt <= 600
    record("6a", ok, f"median P1 test ACER full CCL {full:.3f} <= baseline {base:.3f}; experiment time {dt:.0f}s (limit 600s)")
    assert ok


def test_criterion_6b_negatives_only_collapse(effect_runs):
    acers, _, dt = effect_runs
    full, p5 = _median(acers, "full"), _median(acers, "pattern5")
    ok = p5 >= 1.4 * full and dt <= 600
    record("6b", ok, f"median P1 test ACER pattern-5 only {p5:.3f} vs 1.4 x full {1.4 * full:.3f}")
    assert ok


def _early_l_con(log) -> float:
    vals = [r.l_con for r in log.steps if r.epoch < 3]
    return sum(vals) / len(vals)


def test_criterion_7_cgd_convergence_soft(effect_runs):
    _, logs, _ = effect_runs
    with_cgd = statistics.median(_early_l_con(logs["full", s]) for s in EFFECT_SEEDS)
    without = statistics.median(_early_l_con(logs["no_cgd", s]) for s in EFFECT_SEEDS)
    ok = with_cgd <= without
    record("7", ok, f"(soft) median first-3-epoch l_con with CGD {with_cgd:.4f} <= without {without:.4f}", soft=True)
    if not ok:
        warnings.warn(f"soft criterion 7 not met: {with_cgd:.4f} > {without:.4f}", stacklevel=1)


def test_criterion_8_rppg():
    t0 = time.perf_counter()
    trials = [checks.rppg_trial(s) for s in range(20)]
    dt = time.perf_counter() - t0
    live_peak = all(abs(t["live"][0] - 1.2) <= t["bin_width"][0] for t in trials)
    mask_peak = all(abs(t["mask_periodic"][0] - 2.0) <= t["bin_width"][0] for t in trials)
    live = statistics.median(t["live"][1] for t in trials)
    mask = statistics.median(t["mask_periodic"][1] for t in trials)
    const = statistics.median(t["mask_constant"][1] for t in trials)
    below = all(t["mask_constant"][1] < min(t["live"][1], t["mask_periodic"][1]) for t in trials)
    ok = live_peak and mask_peak and mask >= 0.8 * live and below and dt < 10
    record(
        "8",
        ok,
        f"peaks in bin live={live_peak} mask={mask_peak}; median scores live {live:.0f}, "
        f"periodic mask {mask:.0f}, constant mask {const:.1f} (below both in every trial: {below}); {dt:.2f}s (limit 10s)",
    )
    assert ok


def test_criterion_9_determinism(small_catalog, tmp_path):
    split = build_protocol_split("P1", small_catalog, 0)
    model = ModelConfig(input_dim=small_catalog.dim, hidden=(16,), encoder_dim=8, proj_hidden=16, embed_dim=8)
    cfg = TrainConfig(epochs=4, batch_size=16, milestones=(2, 3), steps_per_epoch=5, model=model)
    blobs = []
    for name in ("a", "b"):
        state, _ = train(small_catalog, split, cfg)
        save_checkpoint(state, tmp_path / f"{name}.bin")
        blobs.append((tmp_path / f"{name}.bin").read_bytes())
    same = blobs[0] == blobs[1]
    bad_codec = 0
    for attrs in itertools.product(Skin, (1, 38, 75, 9999), SampleType, Scene, Lighting, Sensor):
        a = Attributes(*attrs)
        bad_codec += decode_folder_name(encode_folder_name(a)) != a
    ok = same and bad_codec == 0
    record("9", ok, f"checkpoints bitwise identical: {same}; codec round-trip failures over full grid: {bad_codec}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
