import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from stam.errors import ContractError, ShapeError
from stam.interpret import (
    SpatialReport,
    aggregate_spatial,
    aggregate_temporal,
    export_report,
    load_report,
)
from stam.models import AttentionRecord, ModelConfig, build_model


def random_records(n_windows, steps, k, seed=0, batched=False):
    rng = np.random.default_rng(seed)
    w = rng.random((n_windows, steps, k)) + 1e-3
    w /= w.sum(axis=-1, keepdims=True)
    if batched:
        return [AttentionRecord(w, w[..., :k])]
    return [AttentionRecord(w[i], w[i]) for i in range(n_windows)]


def test_uniform_spatial_gives_equal_shares():
    rep = aggregate_spatial([AttentionRecord(np.full((2, 4), 0.25), None)], list("abcd"))
    np.testing.assert_allclose(rep.percent, 25.0)
    assert rep.window_count == 1


def test_two_window_hand_mean():
    recs = [AttentionRecord(np.array([[0.2, 0.8]]), None), AttentionRecord(np.array([[0.6, 0.4]]), None)]
    np.testing.assert_allclose(aggregate_spatial(recs, ["a", "b"]).percent, [40.0, 60.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 4), st.integers(1, 6), st.integers(0, 10**6), st.booleans())
def test_aggregation_equals_flat_average(n, steps, k, seed, batched):
    recs = random_records(n, steps, k, seed, batched)
    sp = aggregate_spatial(recs, [f"v{i}" for i in range(k)])
    tp = aggregate_temporal(recs)
    flat = O.flat_mean_percent([r.spatial for r in recs])
    np.testing.assert_allclose(sp.percent, flat, atol=1e-12)
    np.testing.assert_allclose(tp.percent, flat, atol=1e-12)
    assert abs(sp.percent.sum() - 100) <= 1e-6 and abs(tp.percent.sum() - 100) <= 1e-6
    assert np.all((sp.percent >= 0) & (sp.percent <= 100))
    assert sp.window_count == n


def test_uniform_and_single_step_temporal():
    np.testing.assert_allclose(aggregate_temporal([AttentionRecord(None, np.full((3, 5), 0.2))]).percent, 20.0)
    np.testing.assert_allclose(aggregate_temporal([AttentionRecord(None, np.ones((2, 1)))]).percent, [100.0])


def test_empty_and_mismatched_inputs():
    with pytest.raises(ContractError):
        aggregate_spatial([], [])
    with pytest.raises(ContractError):
        aggregate_temporal([])
    with pytest.raises(ContractError):
        aggregate_spatial([AttentionRecord(None, np.ones((1, 1)))], ["a"])
    with pytest.raises(ShapeError):
        aggregate_spatial([AttentionRecord(np.ones((1, 2)) / 2, None), AttentionRecord(np.ones((1, 3)) / 3, None)], ["a", "b"])
    with pytest.raises(ShapeError):
        aggregate_spatial([AttentionRecord(np.ones((1, 2)) / 2, None)], ["a", "b", "c"])


def test_permutation_consistency():
    recs = random_records(6, 2, 4, seed=3)
    perm = [2, 0, 3, 1]
    names = list("abcd")
    base = aggregate_spatial(recs, names)
    permuted = aggregate_spatial([AttentionRecord(r.spatial[:, perm], None) for r in recs], [names[i] for i in perm])
    np.testing.assert_allclose(permuted.percent, base.percent[perm], atol=1e-12)
    assert permuted.top(2) == base.top(2)


def test_linearity_over_concatenation():
    a, b = random_records(3, 2, 3, seed=1), random_records(7, 2, 3, seed=2)
    names = ["x", "y", "z"]
    ra, rb, rab = aggregate_spatial(a, names), aggregate_spatial(b, names), aggregate_spatial(a + b, names)
    weighted = (ra.percent * 3 + rb.percent * 7) / 10
    np.testing.assert_allclose(rab.percent, weighted, atol=1e-12)


def test_ranks_and_per_step():
    recs = [AttentionRecord(np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3]]), None)]
    rep = aggregate_spatial(recs, ["a", "b", "c"])
    assert rep.rank == [2, 1, 3]
    np.testing.assert_allclose(rep.per_step, [[10, 60, 30], [50, 20, 30]])


def test_darnn_records_aggregate_over_encoder_steps():
    m = build_model(ModelConfig(3, 4, 2, enc_dim=5, dec_dim=5, context_dim=2, arch="da_rnn"))
    X = np.random.default_rng(0).standard_normal((5, 3, 4))
    _, rec = m.forward(X)
    rep = aggregate_spatial([rec], ["a", "b", "c"])
    np.testing.assert_allclose(rep.percent, 100 * m.encoder_spatial_weights(X).mean(axis=(0, 1)), atol=1e-12)
    assert rep.per_step.shape == (4, 3)


def test_json_round_trip(tmp_path):
    recs = random_records(5, 2, 3, seed=4)
    sp, tp = aggregate_spatial(recs, ["p", "q", "r"]), aggregate_temporal(recs)
    export_report(sp, tp, tmp_path / "r.json")
    sp2, tp2 = load_report(tmp_path / "r.json")
    assert sp2.names == sp.names and sp2.window_count == sp.window_count
    np.testing.assert_array_equal(sp2.percent, sp.percent)
    np.testing.assert_array_equal(sp2.std, sp.std)
    np.testing.assert_array_equal(tp2.percent, tp.percent)
    np.testing.assert_array_equal(sp2.per_step, sp.per_step)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [v["name"] for v in doc["spatial"]["variables"]] == ["p", "q", "r"]
    assert list(doc["spatial"]["variables"][0]) == ["name", "index", "rank", "weight_pct", "std_pct"]


def test_csv_export(tmp_path):
    recs = random_records(5, 2, 4, seed=5)
    sp, tp = aggregate_spatial(recs, list("abcd")), aggregate_temporal(recs)
    written = export_report(sp, tp, tmp_path / "att.csv", "csv")
    assert [p.name for p in written] == ["att.csv", "att_temporal.csv"]
    rows = list(csv.reader((tmp_path / "att.csv").open()))
    assert len(rows) == 4 + 1 and rows[0][0] == "variable"
    assert [r[0] for r in rows[1:]] == list("abcd")
    assert abs(sum(float(r[3]) for r in rows[1:]) - 100) <= 1e-4
    trows = list(csv.reader((tmp_path / "att_temporal.csv").open()))
    assert abs(sum(float(r[1]) for r in trows[1:]) - 100) <= 1e-4


def test_temporal_only_csv_and_bad_format(tmp_path):
    tp = aggregate_temporal(random_records(2, 1, 3))
    assert export_report(None, tp, tmp_path / "t.csv", "csv") == [tmp_path / "t.csv"]
    with pytest.raises(ContractError):
        export_report(None, tp, tmp_path / "t.xml", "xml")
    with pytest.raises(OSError):
        export_report(None, tp, tmp_path / "missing" / "t.json")


def test_report_from_dict_keeps_per_run():
    rep = SpatialReport(["a"], np.array([100.0]), np.array([0.0]), 3, np.array([[100.0]]), [[100.0]])
    assert SpatialReport.from_dict(rep.to_dict()).per_run == [[100.0]]
