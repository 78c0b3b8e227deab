import json
import string

import numpy as np
import pytest

from lamae.data.icd import (
    REFERENCE_CODES,
    count_categories,
    normalize_icd,
    reference_counts,
    reference_table,
    select_top_codes,
)
from lamae.data.manifest import Manifest, load_manifest, read_pgm, write_dataset, write_pgm
from lamae.data.sampling import (
    augment_view,
    choose_views,
    gather_pixels,
    sample_views_frames,
    window_indices,
)
from lamae.data.study import Study
from lamae.data.synthetic import (
    FACTOR_RANGES,
    SyntheticConfig,
    SyntheticFactors,
    analytic_area,
    beat_scale,
    code_predicates,
    cross_view_predicates,
    generate_dataset,
    generate_synthetic_study,
    render_ellipse,
)
from lamae.errors import DataError, ParseError


# -- ICD ----------------------------------------------------------------------
@pytest.mark.parametrize(
    "raw,cat", [("I50.9", "I50"), ("I509", "I50"), (" e11.65 ", "E11"), ("C4A.0", "C4A"), ("Z95", "Z95")]
)
def test_normalize_icd(raw, cat):
    assert normalize_icd(raw) == cat


@pytest.mark.parametrize("bad", ["", "50.9", "I5", "II50", "I50.", "I50.12345", "I-50", 50])
def test_normalize_icd_rejects(bad):
    with pytest.raises(ParseError):
        normalize_icd(bad)


def test_normalize_idempotent_fuzz():
    rng = np.random.default_rng(0)
    alnum = string.digits + string.ascii_uppercase
    for _ in range(1000):
        code = rng.choice(list(string.ascii_uppercase)) + rng.choice(list(string.digits)) + rng.choice(list(alnum))
        tail = "".join(rng.choice(list(alnum), size=int(rng.integers(0, 5))))
        raw = code + (("." if rng.random() < 0.5 else "") + tail if tail else "")
        if rng.random() < 0.3:
            raw = raw.lower()
        once = normalize_icd(raw)
        assert once == code and normalize_icd(once) == once


def test_reference_table():
    table = reference_table()
    assert len(REFERENCE_CODES) == 40 and len(table) == 40
    assert table[0].code == "E78" and table[0].prevalence == pytest.approx(56.11)
    assert table[-1].code == "N40" and table[-1].prevalence == pytest.approx(9.80)
    assert "I50" in table.codes
    assert {c for c, _, _ in REFERENCE_CODES} == set(table.codes)
    prev = [e.prevalence for e in table]
    assert prev == sorted(prev, reverse=True)


def test_select_top_codes_ties_and_errors():
    assert select_top_codes({"B": 5, "A": 5}, 10, 1).codes == ["A"]
    with pytest.raises(ValueError):
        select_top_codes({"A": 1}, 10, 2)
    assert reference_counts()["E78"] == 5611


def test_count_categories():
    counts = count_categories({"s1": ["I50.9", "I50.1", "E11"], "s2": ["i509"]})
    assert counts == {"I50": 2, "E11": 1}


# -- sampling -----------------------------------------------------------------
def test_window_indices():
    assert window_indices(40, 8, 32, 3).tolist() == [3, 7, 11, 15, 19, 23, 27, 31]
    assert window_indices(8, 8, 32).tolist() == list(range(8))
    assert window_indices(5, 8, 32).tolist() == [0, 1, 2, 3, 4, 4, 4, 4]
    assert window_indices(20, 8, 32).tolist() == [0, 2, 4, 6, 8, 10, 12, 14]
    with pytest.raises(DataError):
        window_indices(40, 8, 32, 9)


def test_choose_views_fill(rng):
    for _ in range(20):
        v = choose_views(2, 8, rng)
        assert len(v) == 8 and set(v.tolist()) == {0, 1}
        w = choose_views(10, 8, rng)
        assert len(set(w.tolist())) == 8


def _study(n_views=3, length=40, size=8):
    rng = np.random.default_rng(0)
    return Study("s", [rng.integers(0, 256, (length, size, size), dtype=np.uint8) for _ in range(n_views)])


def test_sample_views_frames(rng):
    idx = sample_views_frames(_study(), 2, 8, 32, rng)
    assert idx.views.shape == (2,) and idx.frames.shape == (2, 8)
    assert np.all(np.diff(idx.frames, axis=1) == 4) and idx.frames.max() < 40
    assert len(idx.pairs) == 16
    with pytest.raises(DataError):
        sample_views_frames(Study("e", []), rng=rng)


def test_gather_pixels_scaling(rng):
    s = _study()
    idx = sample_views_frames(s, 2, 2, 32, rng)
    px = gather_pixels(s, idx)
    assert px.shape == (2, 2, 8, 8) and px.dtype == np.float32
    v, f = idx.views[0], idx.frames[0, 1]
    assert np.allclose(px[0, 1], s.views[v][f] / 255.0)


def test_augment_shared_across_frames(rng):
    frame = np.zeros((16, 16))
    frame[4:12, 4:12] = 1.0
    out = augment_view(np.stack([frame, frame]), rng)
    assert out.shape == (2, 16, 16) and np.array_equal(out[0], out[1])
    ident = augment_view(frame[None], rng, scale=(1.0, 1.0), ratio=(1.0, 1.0), max_rotation=0.0)
    assert np.allclose(ident[0], frame, atol=1e-9)


def test_study_validation():
    with pytest.raises(DataError):
        Study("x", [np.zeros((2, 4))]).validate()
    with pytest.raises(DataError):
        Study("x", [np.zeros((1, 4, 4))], labels=np.array([2])).validate()
    with pytest.raises(DataError):
        Study("x", [np.zeros((1, 4, 4))], target=float("nan")).validate()


# -- synthetic ----------------------------------------------------------------
def test_render_area_matches_analytic():
    cov = render_ellipse(112, 0.6, 0.35, rotation_deg=30.0, supersample=8)
    assert cov.sum() == pytest.approx(analytic_area(0.6, 0.35, 112), rel=1e-3)


def test_beat_scale_extremes():
    t = np.arange(32)
    s = beat_scale(t, 0.3, 0.0, 32.0)
    assert s[0] == 1.0 and s[16] == pytest.approx(0.7)


def test_area_fraction_and_target():
    f = SyntheticFactors(0.6, 0.3, 0.2, 0.0, 0.7, 0.0, [0.0], [[0.0, 0.0]])
    assert f.area_fraction == pytest.approx(1 - 0.8**2)
    s = generate_synthetic_study("a", np.random.default_rng(0), SyntheticConfig(n_views=1), factors=f)
    assert s.target == pytest.approx(36.0)
    with pytest.raises(DataError):
        SyntheticFactors(0.0, 0.3, 0.2, 0.0, 0.7, 0.0, [0.0], [[0.0, 0.0]])


def test_noiseless_frames_follow_beat():
    cfg = SyntheticConfig(noise=0.0, n_views=1)
    f = SyntheticFactors(0.6, 0.4, 0.3, 0.0, 0.9, 0.0, [0.0], [[0.0, 0.0]])
    v = generate_synthetic_study("a", np.random.default_rng(0), cfg, factors=f).views[0].astype(float)
    ratio = v[16].sum() / v[0].sum()
    assert ratio == pytest.approx(0.7**2, rel=0.03)


def test_code_predicate_prevalence():
    preds = code_predicates()
    assert [p.name for p in preds] == reference_table().codes
    rng = np.random.default_rng(0)
    draws = {k: rng.uniform(*r, size=20000) for k, r in FACTOR_RANGES.items()}
    table = {e.code: e.prevalence / 100 for e in reference_table()}
    for p in preds:
        x = draws[p.factor]
        rate = np.mean(x > p.threshold if p.above else x < p.threshold)
        assert rate == pytest.approx(table[p.name], abs=0.015), p.describe()


def test_cross_view_balance():
    ds = generate_dataset(400, 3, SyntheticConfig(task="cross_view", image_size=8, n_frames=2))
    rate = np.mean([s.labels[0] for s in ds])
    assert 0.42 < rate < 0.58
    assert len(cross_view_predicates()) == 1


def test_dataset_determinism_and_splits():
    cfg = SyntheticConfig(image_size=12, n_frames=4)
    a = generate_dataset(6, 1, cfg, val_fraction=0.5)
    b = generate_dataset(6, 1, cfg, val_fraction=0.5)
    assert [s.split for s in a] == ["train"] * 3 + ["val"] * 3
    for x, y in zip(a, b):
        assert all(np.array_equal(u, v) for u, v in zip(x.views, y.views))
        assert np.array_equal(x.labels, y.labels) and x.factors == y.factors
    c = generate_dataset(6, 2, cfg)
    assert not np.array_equal(a[0].views[0], c[0].views[0])


def test_labels_regenerate_from_factors():
    preds = code_predicates()
    for s in generate_dataset(5, 0, SyntheticConfig(image_size=8, n_frames=2)):
        f = SyntheticFactors.from_dict(s.factors)
        assert [p(f) for p in preds] == s.labels.tolist()


# -- manifest -----------------------------------------------------------------
def test_pgm_round_trip(tmp_path, rng):
    frame = rng.integers(0, 256, (7, 9), dtype=np.uint8)
    write_pgm(tmp_path / "f.pgm", frame)
    assert np.array_equal(read_pgm(tmp_path / "f.pgm"), frame)
    with pytest.raises(DataError):
        write_pgm(tmp_path / "g.pgm", frame.astype(float))


@pytest.mark.parametrize("fmt", ["pgm", "npy"])
def test_dataset_round_trip(tmp_path, fmt):
    cfg = SyntheticConfig(image_size=12, n_frames=3)
    studies = generate_dataset(4, 0, cfg, val_fraction=0.25)
    codes = [p.name for p in code_predicates()]
    path = write_dataset(studies, tmp_path, codes, ["d"] * 40, frame_format=fmt)
    m = load_manifest(path)
    assert m.codes == codes and len(m) == 4
    back = m.studies()
    for s, r in zip(studies, back):
        assert r.study_id == s.study_id and r.split == s.split
        assert all(np.array_equal(u, v) for u, v in zip(s.views, r.views))
        assert np.array_equal(r.labels, s.labels) and r.target == s.target and r.factors == s.factors
    assert [s.study_id for s in m.studies("val")] == ["syn00003"]


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        Manifest.open(tmp_path / "none.jsonl")
    studies = generate_dataset(2, 0, SyntheticConfig(image_size=8, n_frames=2))
    path = write_dataset(studies, tmp_path, [p.name for p in code_predicates()])
    missing = tmp_path / "frames" / "syn00001" / "v1_f0001.pgm"
    missing.unlink()
    with pytest.raises(DataError, match="syn00001"):
        load_manifest(path).studies()
    path.write_text(path.read_text().splitlines()[0] + "\n{broken\n")
    with pytest.raises(DataError, match=r"jsonl:2: invalid JSON"):
        load_manifest(path).studies()


def test_manifest_label_count_mismatch(tmp_path):
    studies = generate_dataset(1, 0, SyntheticConfig(image_size=8, n_frames=2))
    path = write_dataset(studies, tmp_path, ["A", "B"], frame_format="npy")
    with pytest.raises(DataError):
        load_manifest(path).studies()
    rec = json.loads(path.read_text().splitlines()[1])
    assert len(rec["labels"]) == 40
