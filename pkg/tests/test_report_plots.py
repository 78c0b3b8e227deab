import csv
import json

import numpy as np
import pytest

from lamae import plots
from lamae.errors import DataError
from lamae.optim import ScheduleConfig, lr_at
from lamae.report import aggregate, format_pm, load_report, mean_std, per_code_means, table, top_codes_by_f1


def _rep(auroc, f1, per=None):
    return {"task": "multilabel", "macro_auroc": auroc, "macro_f1": f1, "per_code": per or []}


def test_mean_std_and_format():
    m, s = mean_std([0.70, 0.72, 0.74])
    assert format_pm(m, s) == "0.72 ± 0.02"
    with pytest.raises(DataError):
        mean_std([0.7])


def test_aggregate_and_table():
    reps = [_rep(0.70, 0.3), _rep(0.72, 0.3), _rep(0.74, 0.3)]
    assert aggregate(reps) == {"macro_auroc": "0.72 ± 0.02", "macro_f1": "0.30 ± 0.00"}
    text = table({"LAMAE": reps, "MAE": reps})
    assert text.splitlines()[0] == "| Model | AUROC | F1 |"
    assert "| LAMAE | 0.72 ± 0.02 | 0.30 ± 0.00 |" in text
    with pytest.raises(DataError):
        aggregate([reps[0], {"task": "regression", "mae": 3.0}])


def test_top_codes_skip_undefined():
    a = _rep(0.7, 0.3, [{"code": "A", "f1": 0.5}, {"code": "B", "f1": None}, {"code": "C", "f1": 0.5}])
    b = _rep(0.7, 0.3, [{"code": "A", "f1": 0.1}, {"code": "B", "f1": 0.9}, {"code": "C", "f1": 0.5}])
    assert per_code_means([a, b]) == {"A": 0.3, "B": 0.9, "C": 0.5}
    assert top_codes_by_f1([a, b], 2) == ["B", "C"]


def test_load_report_errors(tmp_path):
    with pytest.raises(DataError):
        load_report(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(DataError):
        load_report(tmp_path / "bad.json")
    (tmp_path / "ok.json").write_text(json.dumps(_rep(0.5, 0.5)))
    assert load_report(tmp_path / "ok.json")["macro_auroc"] == 0.5


def _csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_lr_curve_matches_schedule(tmp_path):
    sched = ScheduleConfig(base_lr=1e-4, warmup_epochs=10, total_epochs=100)
    svg, data = plots.lr_curve(sched, tmp_path, n_points=21)
    rows = _csv(data)[1:]
    assert len(rows) == 21
    for e, v in rows:
        assert float(v) == lr_at(float(e), sched)
    assert svg.read_text().lstrip().startswith("<?xml")


def test_plots_are_reproducible(tmp_path):
    sched = ScheduleConfig(total_epochs=20)
    a, _ = plots.lr_curve(sched, tmp_path / "a")
    b, _ = plots.lr_curve(sched, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_empty_loss_log(tmp_path):
    svg, data = plots.loss_curve([], tmp_path)
    assert svg.exists() and _csv(data) == [["epoch", "split", "loss"]]


def test_loss_curve_splits(tmp_path):
    recs = [{"epoch": "0", "split": "train", "loss": "1.0"}, {"epoch": "0", "split": "val", "loss": ""},
            {"epoch": "1", "split": "train", "loss": "0.5"}]
    _, data = plots.loss_curve(recs, tmp_path)
    assert _csv(data)[1:] == [["0", "train", "1.0"], ["1", "train", "0.5"]]


def test_report_bars_order(tmp_path):
    rep = _rep(0.7, 0.3, [{"code": "A", "auroc": 0.6, "f1": 0.1}, {"code": "B", "auroc": None, "f1": 0.4}])
    paths = plots.report_bars(rep, tmp_path, top=["B", "A"])
    assert len(paths) == 4
    rows = _csv(tmp_path / "per_code_auroc.csv")[1:]
    assert [r[0] for r in rows] == ["B", "A"] and np.isnan(float(rows[0][1]))
