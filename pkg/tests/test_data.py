import numpy as np
import pytest

from rots.data import (
    Dataset,
    align_labels,
    load_dataset,
    load_multichannel_csv,
    load_series,
    load_ucr_tsv,
    synth_two_class,
    write_multichannel_csv,
    write_ucr_tsv,
    znormalize,
)
from rots.errors import EmptyDatasetError, ParseError, ShapeError


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_ucr_single_line(tmp_path):
    ds = load_ucr_tsv(_write(tmp_path, "a.tsv", "2\t0.1\t0.2\n"))
    assert ds.X.shape == (1, 1, 2)
    assert ds.y.tolist() == [0]
    assert ds.label_map == {2: 0}
    np.testing.assert_array_equal(ds.X[0, 0], [0.1, 0.2])


def test_ucr_labels_remapped_in_first_seen_order(tmp_path):
    ds = load_ucr_tsv(_write(tmp_path, "a.tsv", "-1\t0\t1\n1\t2\t3\n-1\t4\t5\n"))
    assert ds.y.tolist() == [0, 1, 0]
    assert ds.num_classes == 2
    ds = load_ucr_tsv(_write(tmp_path, "b.tsv", "1\t0\t1\n-1\t2\t3\n"))
    assert ds.label_map == {1: 0, -1: 1}


def test_ucr_ragged_rows(tmp_path):
    rows = ["1\t" + "\t".join(["0.5"] * 97), "2\t" + "\t".join(["0.5"] * 96)]
    with pytest.raises(ShapeError):
        load_ucr_tsv(_write(tmp_path, "r.tsv", "\n".join(rows) + "\n"))


def test_ucr_parse_error_names_line(tmp_path):
    p = _write(tmp_path, "bad.tsv", "1\t0.1\t0.2\n2\t0.3\tabc\n")
    with pytest.raises(ParseError) as exc:
        load_ucr_tsv(p)
    assert exc.value.line == 2
    assert "2" in str(exc.value)


def test_ucr_empty(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_ucr_tsv(_write(tmp_path, "e.tsv", ""))


def test_multichannel_reshape_channel_major(tmp_path):
    ds = load_multichannel_csv(_write(tmp_path, "m.csv", "7,1,2,3,4,5,6\n"), channels=2)
    assert ds.X.shape == (1, 2, 3)
    np.testing.assert_array_equal(ds.X[0], [[1, 2, 3], [4, 5, 6]])


def test_multichannel_indivisible(tmp_path):
    with pytest.raises(ShapeError):
        load_multichannel_csv(_write(tmp_path, "m.csv", "7,1,2,3,4,5\n"), channels=2)


def test_multichannel_empty(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_multichannel_csv(_write(tmp_path, "m.csv", ""), channels=2)


def test_tsv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((5, 1, 9)), [0, 1, 1, 0, 1], 2, "train", {3: 0, -2: 1})
    p = tmp_path / "rt.tsv"
    write_ucr_tsv(ds, p)
    back = load_ucr_tsv(p)
    np.testing.assert_allclose(back.X, ds.X, atol=1e-9, rtol=0)
    assert back.y.tolist() == ds.y.tolist()
    assert back.label_map == ds.label_map


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    ds = Dataset(rng.standard_normal((4, 3, 5)), [0, 1, 2, 0], 3)
    p = tmp_path / "rt.csv"
    write_multichannel_csv(ds, p)
    back = load_dataset(p, "csv", channels=3)
    np.testing.assert_allclose(back.X, ds.X, atol=1e-9, rtol=0)
    assert back.y.tolist() == ds.y.tolist()


def test_write_ucr_rejects_multichannel(tmp_path):
    ds = Dataset(np.zeros((1, 2, 3)), [0], 1)
    with pytest.raises(ShapeError):
        write_ucr_tsv(ds, tmp_path / "x.tsv")


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 3)), [0, 1], 2)
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 1, 3)), [0], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1, 3)), [2], 2)
    with pytest.raises(ValueError):
        Dataset(np.full((1, 1, 3), np.nan), [0], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 1, 3)), [0], 2, split="dev")


def test_dataset_accessors():
    ds = synth_two_class(4, 8, 0.0, seed=0)
    ts = ds[3]
    assert ts.label == 1 and ts.channels == 1 and ts.length == 8
    assert len(ds.samples) == 4
    assert ds.with_split("test").split == "test"


def test_synth_zero_noise_exact_sines():
    ds = synth_two_class(4, 16, 0.0, seed=5)
    t = np.arange(16)
    np.testing.assert_array_equal(ds.y, [0, 0, 1, 1])
    for i in (0, 1):
        np.testing.assert_allclose(ds.X[i, 0], np.sin(2 * np.pi * t / 16), atol=1e-15)
    for i in (2, 3):
        np.testing.assert_allclose(ds.X[i, 0], np.sin(4 * np.pi * t / 16), atol=1e-15)


def test_synth_deterministic():
    a = synth_two_class(10, 12, 0.3, seed=4)
    b = synth_two_class(10, 12, 0.3, seed=4)
    assert a.X.tobytes() == b.X.tobytes()
    c = synth_two_class(10, 12, 0.3, seed=5)
    assert not np.array_equal(a.X, c.X)


def test_synth_argument_errors():
    with pytest.raises(ValueError):
        synth_two_class(5, 16, 0.1, seed=0)
    with pytest.raises(ValueError):
        synth_two_class(4, 7, 0.1, seed=0)


def test_synth_classes_separable_by_correlation_sign():
    ds = synth_two_class(60, 32, 0.05, seed=0)
    t = np.arange(32)
    template = np.sin(2 * np.pi * t / 32) - np.sin(4 * np.pi * t / 32)
    score = ds.X[:, 0] @ template
    assert np.all(score[ds.y == 0] > 0) and np.all(score[ds.y == 1] < 0)


def test_znormalize_constant_channel_zero():
    ds = Dataset(np.array([[[3.0, 3.0, 3.0], [0.0, 2.0, 4.0]]]), [0], 1)
    z = znormalize(ds)
    np.testing.assert_array_equal(z.X[0, 0], 0.0)
    assert np.isfinite(z.X).all()


def test_znormalize_hand_value():
    ds = Dataset(np.array([[[0.0, 2.0]]]), [0], 1)
    np.testing.assert_allclose(znormalize(ds).X[0, 0], [-1.0, 1.0], atol=1e-15)


def test_znormalize_idempotent():
    ds = synth_two_class(6, 20, 0.4, seed=2)
    z1 = znormalize(ds)
    z2 = znormalize(z1)
    np.testing.assert_allclose(z2.X, z1.X, atol=1e-12)
    np.testing.assert_allclose(z1.X.mean(axis=2), 0, atol=1e-12)
    np.testing.assert_allclose(z1.X.std(axis=2), 1, atol=1e-12)


def test_align_labels(tmp_path):
    tr = load_ucr_tsv(_write(tmp_path, "tr.tsv", "5\t0\t1\n9\t1\t0\n"))
    te = load_ucr_tsv(_write(tmp_path, "te.tsv", "9\t0\t1\n5\t1\t0\n"), split="test")
    assert te.y.tolist() == [0, 1]
    al = align_labels(te, tr)
    assert al.y.tolist() == [1, 0]
    bad = load_ucr_tsv(_write(tmp_path, "bad.tsv", "4\t0\t1\n"))
    with pytest.raises(ValueError):
        align_labels(bad, tr)


def test_load_series(tmp_path):
    x = load_series(_write(tmp_path, "s.txt", "0 1 2\n3,4,5\n"))
    np.testing.assert_array_equal(x, [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(ShapeError):
        load_series(_write(tmp_path, "r.txt", "0 1 2\n3 4\n"))
    with pytest.raises(ParseError):
        load_series(_write(tmp_path, "p.txt", "0 x 2\n"))
    with pytest.raises(EmptyDatasetError):
        load_series(_write(tmp_path, "e.txt", "\n"))
