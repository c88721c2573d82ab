"""Smoke tests for the python extension.

Each check recomputes the result with plain numpy so the bindings are
validated against an implementation that shares no code with the library.
"""

import math

import numpy as np
import pytest

import _rmx


RNG = np.random.default_rng(42)


def test_scan_matches_numpy_recurrence():
    x = RNG.normal(size=(17, 5))
    g = 1.0 / (1.0 + np.exp(-RNG.normal(size=(17, 5))))
    want = np.zeros_like(x)
    carry = np.zeros(5)
    for t in range(x.shape[0]):
        carry = g[t] * carry + (1.0 - g[t]) * x[t]
        want[t] = carry
    got_seq = _rmx.scan_sequential(x, g)
    got_par = _rmx.scan_parallel(x, g)
    np.testing.assert_allclose(got_seq, want, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got_par, want, rtol=0, atol=1e-11)


def test_softmax_matches_numpy():
    v = RNG.normal(size=9) * 3.0
    got = np.asarray(_rmx.softmax(v))
    want = np.exp(v - v.max())
    want /= want.sum()
    np.testing.assert_allclose(got, want, atol=1e-14)
    assert got.sum() == pytest.approx(1.0)


def test_rope_rotation_preserves_norm_and_matches_formula():
    row = RNG.normal(size=8)
    pos = 37
    got = np.asarray(_rmx.rope_apply(row, pos, 10000.0))
    assert np.linalg.norm(got) == pytest.approx(np.linalg.norm(row))
    want = row.copy()
    d = row.size
    for i in range(d // 2):
        angle = pos * (10000.0 ** (-2.0 * i / d))
        c, s = math.cos(angle), math.sin(angle)
        a, b = row[2 * i], row[2 * i + 1]
        want[2 * i] = a * c - b * s
        want[2 * i + 1] = a * s + b * c
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_dilated_indices_structure():
    # t = 25, D = 4: summaries at block ends 3, 7, ..., plus self.
    got = _rmx.dilated_indices(25, dilation=4)
    positions = [p for p, _ in got]
    assert positions == sorted(positions)
    assert positions[-1] == 25
    labels = dict(got)
    assert labels[25] == "SELF"
    for end in (3, 7, 11, 15, 19, 23):
        assert end in labels
    # Dense row attends everything.
    dense = _rmx.dilated_indices(6, dilation=1)
    assert [p for p, _ in dense] == list(range(7))


def test_expected_cache_entries_matches_attended_superset():
    # Dense: every position plus one recurrence state slot.
    assert _rmx.expected_cache_entries(99, dilation=1) == 101
    # The documented long-context anchor.
    assert _rmx.expected_cache_entries(4096, dilation=16, sinks=4) == 261


def test_block_scores_match_numpy():
    q = RNG.normal(size=6)
    kmin = RNG.normal(size=6)
    kmax = kmin + np.abs(RNG.normal(size=6))
    want_quest = np.maximum(q * kmin, q * kmax).sum()
    assert _rmx.quest_block_score(q, kmin, kmax) == pytest.approx(want_quest, abs=1e-12)
    mean = RNG.normal(size=6)
    assert _rmx.moba_block_score(q, mean) == pytest.approx(float(q @ mean), abs=1e-12)


def test_attend_matches_numpy_softmax_attention():
    n, d = 12, 4
    keys = RNG.normal(size=(n, d))
    values = RNG.normal(size=(n, d))
    q = RNG.normal(size=d)
    positions = [0, 3, 4, 9, 11]
    scale = 1.0 / math.sqrt(d)
    got = np.asarray(_rmx.attend(q, keys, values, positions, scale))
    scores = np.array([q @ keys[p] * scale for p in positions])
    w = np.exp(scores - scores.max())
    w /= w.sum()
    want = w @ values[positions]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_temporal_mix_runs_and_gates_output():
    T, dm, width = 10, 6, 8
    x = RNG.normal(size=(T, dm))
    mats = {name: RNG.normal(size=(dm, width)) * 0.2 for name in ("wq", "wk", "wv", "wg", "wog")}
    wout = RNG.normal(size=(width, dm)) * 0.2
    y = _rmx.temporal_mix(
        x, mats["wq"], mats["wk"], mats["wv"], mats["wg"], mats["wog"], wout,
        heads=2, dilation=2, window=1, sinks=1,
    )
    assert y.shape == (T, dm)
    assert np.all(np.isfinite(y))
    # A zero output-gate projection pins the gate at sigmoid(0) = 0.5, after
    # which the final projection is linear: doubling it must double the output.
    half = _rmx.temporal_mix(
        x, mats["wq"], mats["wk"], mats["wv"], mats["wg"], np.zeros((dm, width)), wout,
        heads=2, dilation=2, window=1, sinks=1,
    )
    doubled = _rmx.temporal_mix(
        x, mats["wq"], mats["wk"], mats["wv"], mats["wg"], np.zeros((dm, width)), 2.0 * wout,
        heads=2, dilation=2, window=1, sinks=1,
    )
    np.testing.assert_allclose(doubled, 2.0 * half, atol=1e-12)
    # And the gate itself has to matter.
    assert np.abs(y - half).max() > 1e-6


def test_flops_decrease_with_dilation():
    dense = _rmx.flops_per_token(65535, dilation=1)
    sparse = _rmx.flops_per_token(65535, dilation=16, sinks=4)
    assert sparse["total"] < dense["total"] / 10
    assert dense["scoring"] == 0.0
    assert dense["recurrence"] == sparse["recurrence"]


def test_validation_errors_surface_as_exceptions():
    with pytest.raises(Exception):
        _rmx.dilated_indices(5, dilation=0)
    with pytest.raises(Exception):
        _rmx.scan_sequential(np.zeros((3, 2)), np.zeros((4, 2)))
