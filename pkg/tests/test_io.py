import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pumap.datasets import bundled_moons_path, moons
from pumap.exceptions import CapabilityError, DataError
from pumap.fuzzy import fit_kernel_params
from pumap.io import (
    emit_plot_data,
    load_dataset,
    read_csv_matrix,
    read_embedding_binary,
    read_embedding_csv,
    save_dataset,
    write_embedding_binary,
    write_embedding_csv,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_csv_with_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3,4\n5,6\n")
    x, y = load_dataset(p)
    assert x.shape == (3, 2) and y is None


def test_csv_label_column_split(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label,b\n1,0,2\n3,1,4\n")
    x, y = load_dataset(p)
    np.testing.assert_array_equal(x, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(y, [0, 1])


def test_ragged_and_non_numeric_report_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError, match=":3:"):
        load_dataset(p)
    p.write_text("1,2\n3,x\n")
    with pytest.raises(DataError, match=":2: non-numeric cell 'x'"):
        load_dataset(p)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing.csv")


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)), elements=finite), st.booleans())
def test_binary_round_trip_bit_exact(tmp_path_factory, data, with_labels):
    path = tmp_path_factory.mktemp("bin") / "d.bin"
    labels = np.arange(data.shape[0]) % 3 if with_labels else None
    save_dataset(path, data, labels)
    x, y = load_dataset(path)
    assert x.tobytes() == data.tobytes()
    if with_labels:
        np.testing.assert_array_equal(y, labels)
    else:
        assert y is None


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)), elements=finite))
def test_csv_round_trips(tmp_path_factory, data):
    d = tmp_path_factory.mktemp("csv")
    save_dataset(d / "d.csv", data, np.zeros(data.shape[0], dtype=int))
    x, y = load_dataset(d / "d.csv")
    assert x.tobytes() == data.tobytes()
    write_embedding_csv(d / "e.csv", data)
    assert read_embedding_csv(d / "e.csv").tobytes() == data.tobytes()


def test_binary_corruption(tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(path, np.ones((3, 2)))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(DataError):
        load_dataset(path)
    path.write_bytes(b"NOPE")
    with pytest.raises(DataError):
        load_dataset(path)


def test_embedding_binary_round_trip(tmp_path, rng):
    coords = rng.normal(size=(7, 3))
    kernel = fit_kernel_params(0.1)
    write_embedding_binary(tmp_path / "e.bin", coords, kernel)
    back, k = read_embedding_binary(tmp_path / "e.bin")
    assert back.tobytes() == coords.tobytes()
    assert k == kernel


def test_plot_data(tmp_path, rng):
    coords = rng.normal(size=(10, 2))
    emit_plot_data(coords, np.arange(10) % 2, tmp_path / "plot.csv", {"loss": np.linspace(1, 0, 5)})
    header, arr = read_csv_matrix(tmp_path / "plot.csv")
    assert header == ["x", "y", "label"] and arr.shape == (10, 3)
    header, hist = read_csv_matrix(tmp_path / "plot.loss.csv")
    assert header == ["epoch", "loss"]
    assert np.all(np.diff(hist[:, 0]) == 1)


def test_plot_data_needs_2d_but_keeps_loss(tmp_path, rng):
    with pytest.raises(CapabilityError):
        emit_plot_data(rng.normal(size=(5, 3)), None, tmp_path / "p.csv", {"loss": [1.0, 0.5]})
    assert (tmp_path / "p.loss.csv").exists()
    assert not (tmp_path / "p.csv").exists()


def test_bundled_moons_matches_generator():
    x, y = load_dataset(bundled_moons_path())
    gx, gy = moons(1000, seed=0)
    np.testing.assert_allclose(x, gx, atol=1e-12)
    np.testing.assert_array_equal(y, gy)
