import re
from collections import Counter

import numpy as np
import pytest

from ccl_pad.catalog import FRAME, LIGHT, SCENE, SENSOR, SKIN, SUBJECT, TYPE, SynthConfig, synth_catalog
from ccl_pad.pairs import (
    INCREMENTAL_COMBINATIONS,
    PATTERNS,
    BatchBuilder,
    PatternIndex,
    UnsatisfiablePatternError,
    build_batch,
    dump_pairs,
    epoch_length,
    sample_pair,
)

COLS = {"subject": SUBJECT, "type": TYPE, "scene": SCENE, "light": LIGHT, "sensor": SENSOR, "frame": FRAME}


def test_pattern_table():
    for pid, pat in PATTERNS.items():
        assert "frame" in pat.varying
        assert (pat.polarity == "negative") == ("type" in pat.varying)
    assert [p for p, pat in PATTERNS.items() if pat.polarity == "negative"] == [5]
    assert INCREMENTAL_COMBINATIONS[5] == (1, 2, 3, 4, 5, 6)


@pytest.mark.parametrize("pid", sorted(PATTERNS))
def test_pattern_soundness(small_catalog, pid):
    pat = PATTERNS[pid]
    a, b = PatternIndex(small_catalog, pat).sample(10_000, np.random.default_rng(pid))
    A, B = small_catalog.attrs[a], small_catalog.attrs[b]
    for name, col in COLS.items():
        if name in pat.varying:
            assert (A[:, col] != B[:, col]).all(), name
        else:
            assert (A[:, col] == B[:, col]).all(), name
    if "subject" not in pat.varying:
        assert (A[:, SKIN] == B[:, SKIN]).all()
    la, lb = small_catalog.labels[a], small_catalog.labels[b]
    same = la == lb
    assert same.all() if pat.polarity == "positive" else (~same).all()


def test_pattern_examples(small_catalog):
    rng = np.random.default_rng(0)
    p1 = sample_pair(small_catalog, 1, rng)
    a, b = p1.first.attributes, p1.second.attributes
    assert a.frame_index != b.frame_index and p1.pair_label == 1
    assert (a.skin, a.subject, a.sample_type, a.scene, a.lighting, a.sensor) == (
        b.skin,
        b.subject,
        b.sample_type,
        b.scene,
        b.lighting,
        b.sensor,
    )
    p5 = sample_pair(small_catalog, 5, rng)
    assert p5.pair_label == 0 and p5.first.attributes.subject == p5.second.attributes.subject
    assert {p5.first.label, p5.second.label} == {0, 1}
    p6 = sample_pair(small_catalog, 6, rng)
    a, b = p6.first.attributes, p6.second.attributes
    assert a.subject != b.subject and p6.pair_label == 1
    assert (a.sample_type, a.scene, a.lighting, a.sensor) == (b.sample_type, b.scene, b.lighting, b.sensor)


def test_first_sample_uniform_over_valid_rows(small_catalog):
    idx = PatternIndex(small_catalog, PATTERNS[1])
    first, _ = idx.sample(200_000, np.random.default_rng(1))
    counts = np.bincount(first, minlength=len(small_catalog))[idx.valid_first]
    expected = 200_000 / idx.valid_first.size
    assert abs(counts.mean() - expected) < 1e-9
    # Each count is Binomial(200000, 1/960); 5 sigma is ~73.
    assert np.abs(counts - expected).max() < 5 * np.sqrt(expected)


def test_batch_examples(small_catalog):
    rng = np.random.default_rng(0)
    batch = build_batch(small_catalog, [1, 2, 3, 4, 5, 6], None, 256, rng)
    assert len(batch) == 256
    assert set(batch.pair_labels.tolist()) == {0, 1}
    neg = build_batch(small_catalog, [5], None, 8, rng)
    assert len(neg) == 8 and (neg.pair_labels == 0).all()


def test_batch_determinism(small_catalog):
    b1 = build_batch(small_catalog, [1, 2, 3, 4, 5, 6], None, 64, np.random.default_rng(9))
    b2 = build_batch(small_catalog, [1, 2, 3, 4, 5, 6], None, 64, np.random.default_rng(9))
    assert np.array_equal(b1.first, b2.first) and np.array_equal(b1.second, b2.second)
    assert np.array_equal(b1.pattern_ids, b2.pattern_ids)


def test_polarity_law(small_catalog):
    batch = BatchBuilder(small_catalog).sample(2000, np.random.default_rng(4))
    expect = np.array([PATTERNS[int(p)].polarity == "positive" for p in batch.pattern_ids])
    assert np.array_equal(batch.pair_labels == 1, expect)


def test_coverage_within_three_sigma(small_catalog):
    weights = [1, 2, 1, 1, 3, 1]
    builder = BatchBuilder(small_catalog, [1, 2, 3, 4, 5, 6], weights)
    n = 12_000
    counts = Counter(builder.sample(n, np.random.default_rng(2)).pattern_ids.tolist())
    for pid, w in zip(range(1, 7), weights):
        p = w / sum(weights)
        assert abs(counts[pid] - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_balanced_batches(small_catalog):
    batch = BatchBuilder(small_catalog, balance=True).sample(64, np.random.default_rng(0))
    assert (batch.pair_labels == 1).sum() == 32


def test_unsatisfiable_patterns(caplog):
    one_frame = synth_catalog(SynthConfig(subjects=3, frames=1, dim=4, scenes=(1,), lights=(1, 2), sensors=(1,)), 0)
    with pytest.raises(UnsatisfiablePatternError):
        BatchBuilder(one_frame, [1])
    with pytest.raises(UnsatisfiablePatternError):
        sample_pair(one_frame, 1, np.random.default_rng(0))
    one_sensor = synth_catalog(SynthConfig(subjects=3, frames=2, dim=4, scenes=(1,), lights=(1, 2), sensors=(1,)), 0)
    builder = BatchBuilder(one_sensor, [2, 3])
    assert builder.skipped == {2: 1}
    assert "pattern 2" in caplog.text
    batch = builder.sample(16, np.random.default_rng(0))
    assert (batch.pattern_ids == 3).all()


def test_bad_weights(small_catalog):
    with pytest.raises(ValueError):
        BatchBuilder(small_catalog, [1, 2], [0, 0])
    with pytest.raises(ValueError):
        BatchBuilder(small_catalog, [1, 2], [1, -1])
    with pytest.raises(ValueError):
        BatchBuilder(small_catalog, [7])


def test_dump_format(small_catalog):
    batch = BatchBuilder(small_catalog).sample(20, np.random.default_rng(0))
    pattern = re.compile(r"^[1-6],[YWB]_\d{4}(_\d){4}-\d{2},[YWB]_\d{4}(_\d){4}-\d{2},[01]$")
    lines = dump_pairs(small_catalog, batch)
    assert len(lines) == 20 and all(pattern.match(line) for line in lines)


def test_epoch_length():
    assert epoch_length(1000, 64) == 8
    assert epoch_length(128, 64) == 1
    assert epoch_length(1, 64) == 1
