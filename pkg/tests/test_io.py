import numpy as np
import pytest

from fpbary.core import DiscreteMeasure
from fpbary.io import MeasureFormatError, load_measure, save_measure


@pytest.mark.parametrize("suffix", [".json", ".csv"])
def test_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    mu = DiscreteMeasure(rng.standard_normal((7, 3)), rng.dirichlet(np.ones(7)))
    path = tmp_path / f"mu{suffix}"
    save_measure(path, mu)
    back = load_measure(path)
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_allclose(back.weights, mu.weights, rtol=1e-15)


def test_json_without_weights_is_uniform(tmp_path):
    path = tmp_path / "mu.json"
    path.write_text('{"points": [1.0, 2.0, 4.0]}')
    mu = load_measure(path)
    assert mu.points.shape == (3, 1)
    np.testing.assert_allclose(mu.weights, 1 / 3)


def test_csv_header_and_flag(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("# comment\nx,y,mass\n0,0,1\n1,0,3\n")
    mu = load_measure(path)
    assert mu.points.tolist() == [[0.0, 0.0], [1.0, 0.0]]
    np.testing.assert_allclose(mu.weights, [0.25, 0.75])
    plain = tmp_path / "b.csv"
    plain.write_text("0,0,1\n1,0,3\n")
    assert load_measure(plain).dim == 3
    assert load_measure(plain, weights_column=True).dim == 2


@pytest.mark.parametrize("name,text,where", [
    ("bad.csv", "0,1\n2,x\n", ":2:"),
    ("ragged.csv", "0,1\n2,3,4\n", ":2:"),
    ("bad.json", '{"points": [[0, 1]],\n "weights": [1.0],\n}', ":3:"),
    ("keys.json", '{"points": [[0]], "colour": 1}', ":1:"),
])
def test_errors_name_file_and_line(tmp_path, name, text, where):
    path = tmp_path / name
    path.write_text(text)
    with pytest.raises(MeasureFormatError) as info:
        load_measure(path)
    assert name in str(info.value) and where in str(info.value)


def test_other_errors(tmp_path):
    with pytest.raises(MeasureFormatError):
        load_measure(tmp_path / "mu.npy")
    empty = tmp_path / "empty.csv"
    empty.write_text("x,y\n")
    with pytest.raises(MeasureFormatError):
        load_measure(empty)
    neg = tmp_path / "neg.json"
    neg.write_text('{"points": [[0], [1]], "weights": [-0.5, 1.5]}')
    with pytest.raises(MeasureFormatError):
        load_measure(neg)
