import numpy as np
import pytest
from conftest import random_model
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simparts.io import (dumps_model, format_cloud, format_report, parse_cloud, parse_report,
                         read_cloud, read_indices, read_model, write_cloud, write_indices,
                         write_model, write_ply)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(float, st.tuples(st.integers(0, 20), st.just(3)), elements=finite),
       st.booleans())
def test_cloud_text_round_trip(points, with_labels):
    labels = np.arange(len(points)) % 3 if with_labels else None
    text = format_cloud(points, labels, [" made by a test"])
    c = parse_cloud(text)
    assert np.array_equal(c.points.reshape(-1, 3), points)
    assert format_cloud(c.points, c.labels, c.comments) == text


def test_cloud_file_round_trip_is_byte_identical(tmp_path, rng):
    path = tmp_path / "c.txt"
    write_cloud(path, rng.normal(size=(30, 3)), rng.integers(0, 5, 30), [" header"])
    raw = path.read_bytes()
    c = read_cloud(path)
    write_cloud(path, c.points, c.labels, c.comments)
    assert path.read_bytes() == raw


def test_cloud_parse_errors():
    with pytest.raises(ValueError, match="x y z"):
        parse_cloud("1 2\n")
    with pytest.raises(ValueError):
        parse_cloud("1 2 3\n1 2 3 4\n")
    with pytest.raises(ValueError):
        parse_cloud("1 2 a\n")


def test_model_round_trip(tmp_path, rng):
    model = random_model(rng, M_s=2, M_T=3, N_p=7)
    path = tmp_path / "m.json"
    write_model(path, model)
    raw = path.read_bytes()
    back = read_model(path)
    assert back.equals(model)
    write_model(path, back)
    assert path.read_bytes() == raw
    assert dumps_model(back) == raw.decode()


def test_model_document_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        read_model(path)
    path.write_text("{not json")
    with pytest.raises(ValueError):
        read_model(path)


def test_indices_and_report_round_trip(tmp_path):
    path = tmp_path / "idx.txt"
    write_indices(path, [3, 1, 4])
    raw = path.read_bytes()
    write_indices(path, read_indices(path))
    assert path.read_bytes() == raw and list(read_indices(path)) == [3, 1, 4]
    text = format_report([("mmd", "cd", 0.125), ("jsd", "grid28", 1 / 3)])
    parsed = parse_report(text)
    assert parsed[("jsd", "grid28")] == 1 / 3
    assert format_report([(a, b, v) for (a, b), v in parsed.items()]) == text


def test_ply_header(tmp_path, rng):
    path = tmp_path / "p.ply"
    write_ply(path, rng.normal(size=(4, 3)), [0, 0, 1, 1])
    lines = path.read_text().splitlines()
    assert lines[0] == "ply" and "element vertex 4" in lines and "property int part" in lines
    assert lines[lines.index("end_header") + 1].split()[-1] == "0"
    assert len(lines) == lines.index("end_header") + 5
