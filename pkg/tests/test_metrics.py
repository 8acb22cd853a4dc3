import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedfewshot.errors import EmptyInput
from fedfewshot.metrics import (
    ConfusionMatrix,
    TimingReport,
    f1_per_class,
    format_mean_std,
    render_table,
    summarize,
    write_summary_json,
)


def test_f1_hand_computed():
    # true a,a,b; predicted a,b,b -> a: P=1 R=1/2, b: P=1/2 R=1
    cm = ConfusionMatrix.from_predictions(["a", "a", "b"], ["a", "b", "b"], labels=["a", "b"])
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    f1 = f1_per_class(cm)
    assert f1["a"] == pytest.approx(2 / 3)
    assert f1["b"] == pytest.approx(2 / 3)


def test_f1_class_never_predicted_scores_zero():
    cm = ConfusionMatrix.from_predictions([0, 0, 1, 1], [0, 0, 0, 0], labels=[0, 1])
    f1 = f1_per_class(cm)
    assert f1[1] == 0.0
    assert f1[0] == pytest.approx(2 * 0.5 * 1 / 1.5)


def test_f1_perfect():
    y = [0, 1, 2, 1, 0]
    assert all(v == 1.0 for v in f1_per_class(ConfusionMatrix.from_predictions(y, y)).values())


def test_f1_invariant_under_label_permutation():
    rng = np.random.default_rng(4)
    y_true = rng.integers(0, 3, 40).tolist()
    y_pred = rng.integers(0, 3, 40).tolist()
    base = f1_per_class(ConfusionMatrix.from_predictions(y_true, y_pred, labels=[0, 1, 2]))
    perm = {0: 2, 1: 0, 2: 1}
    moved = f1_per_class(
        ConfusionMatrix.from_predictions(
            [perm[v] for v in y_true], [perm[v] for v in y_pred], labels=[0, 1, 2]
        )
    )
    for old, new in perm.items():
        assert moved[new] == pytest.approx(base[old])


def test_summarize_two_episodes():
    s = summarize([{"x": 0.8}, {"x": 1.0}])
    assert s.scores["x"].mean == pytest.approx(0.9)
    assert s.scores["x"].std == pytest.approx(0.1)
    assert s.scores["x"].episodes == 2
    assert str(s.scores["x"]) == "0.90 ± 0.10"


def test_summarize_empty_raises():
    with pytest.raises(EmptyInput):
        summarize([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=30))
def test_summary_bounds(values):
    s = summarize([{"c": v} for v in values]).scores["c"]
    assert min(values) <= s.mean <= max(values)
    assert s.std >= 0.0
    assert (s.std == 0.0) == (len(set(values)) == 1)


def test_format_and_table():
    assert format_mean_std(0.876, 0.021) == "0.88 ± 0.02"
    a = summarize([{"cold": 0.9, "wet": 0.7}])
    b = summarize([{"cold": 0.8, "wet": 0.6}])
    out = render_table({"fed": a, "local": b}, title="fold1")
    lines = out.splitlines()
    assert lines[0] == "fold1"
    assert any("cold" in ln and "0.90 ± 0.00" in ln and "0.80 ± 0.00" in ln for ln in lines)
    assert len({len(ln) for ln in lines[1:]}) == 1


def test_timing_report():
    t = TimingReport()
    for i in range(20):
        t.add(i, 2 * i)
    rows = {name: (mean, p95, n) for name, mean, p95, n in t.rows()}
    assert rows["Average weights"][0] == pytest.approx(9.5)
    assert rows["Update weights"][0] == pytest.approx(19.0)
    assert rows["Average weights"][2] == 20
    assert rows["Average weights"][1] == pytest.approx(np.percentile(np.arange(20), 95))
    assert "Average weights" in t.render()
    assert len(t.per_round_lines()) == 20


def test_summary_json(tmp_path):
    s = summarize([{"a": 0.5}, {"a": 1.0}], setting="fed", fold="fold1")
    path = tmp_path / "m.json"
    write_summary_json(path, s.to_dict())
    back = json.loads(path.read_text())
    assert back["setting"] == "fed"
    assert back["labels"]["a"]["f1_mean"] == pytest.approx(0.75)
