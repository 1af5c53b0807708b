import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from teqdet import fileio
from teqdet.structures import Box3D, PointCloud, ProposalSet


def test_read_two_records(tmp_path):
    rec = np.array([[1.0, 2.0, 3.0, 0.5], [-4.0, 5.25, -6.0, 1.0]], dtype="<f4")
    p = tmp_path / "a.bin"
    p.write_bytes(rec.tobytes())
    pc = fileio.read_point_bin(p)
    np.testing.assert_array_equal(pc.xyz, rec[:, :3])
    np.testing.assert_array_equal(pc.features, rec[:, 3:])


def test_empty_scan(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert len(fileio.read_point_bin(p)) == 0


def test_misaligned_scan(tmp_path):
    p = tmp_path / "m.bin"
    p.write_bytes(b"\0" * 17)
    with pytest.raises(fileio.FormatError):
        fileio.read_point_bin(p)


def test_non_finite_record_is_named(tmp_path):
    rec = np.zeros((3, 4), dtype="<f4")
    rec[2, 1] = np.nan
    p = tmp_path / "n.bin"
    p.write_bytes(rec.tobytes())
    with pytest.raises(fileio.FormatError, match="record 2"):
        fileio.read_point_bin(p)


@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 30), st.just(4)), elements=st.floats(-1e4, 1e4, width=32)))
def test_point_round_trip_is_bitwise(arr):
    import tempfile
    from pathlib import Path

    pc = PointCloud(arr[:, :3].astype(np.float64), arr[:, 3:].astype(np.float64))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "s.bin"
        fileio.write_point_bin(p, pc)
        back = fileio.read_point_bin(p)
        assert p.read_bytes() == arr.astype("<f4").tobytes()
    np.testing.assert_array_equal(back.xyz, pc.xyz)
    np.testing.assert_array_equal(back.features, pc.features)


def test_parse_box_line():
    s = fileio.parse_boxes("0 0 0 4 2 1.5 0")
    assert len(s) == 1
    np.testing.assert_array_equal(s[0].center, [0, 0, 0])
    assert s.scores == (None,)


def test_comment_only():
    assert len(fileio.parse_boxes("# comment\n\n")) == 0


@pytest.mark.parametrize("line", ["0 0 0 −4 2 1.5 0", "0 0 0 -4 2 1.5 0", "0 0 0 4 0 1.5 0"])
def test_non_positive_size(line):
    with pytest.raises(fileio.FormatError, match=":1:"):
        fileio.parse_boxes(line)


@pytest.mark.parametrize("text, lineno", [("0 0 0 4 2 1.5", 1), ("# ok\n0 0 0 4 2 1.5 x", 2), ("1 2 3 4 5 6 7\n1 2", 2)])
def test_malformed_lines_report_line_number(text, lineno):
    with pytest.raises(fileio.FormatError, match=f":{lineno}:"):
        fileio.parse_boxes(text)


def test_boxes_round_trip_with_scores(tmp_path):
    boxes = ProposalSet((Box3D((1, 2, 3), (4, 2, 1.5), 0.3), Box3D((-1, 0, 0), (1, 1, 1), -3.0)), (0.9, None))
    p = tmp_path / "b.txt"
    fileio.write_boxes(p, boxes)
    back = fileio.read_boxes(p)
    assert back.scores == (0.9, None)
    for a, b in zip(boxes, back):
        np.testing.assert_array_equal(a.center, b.center)
        np.testing.assert_array_equal(a.size, b.size)
        assert a.yaw == b.yaw


def test_eqvx_layout():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    raw = fileio.encode_eqvx(a)
    assert raw[:4] == b"EQVX"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 2, 2, 3]
    np.testing.assert_array_equal(np.frombuffer(raw[20:], "<f4"), a.ravel())


def test_eqvx_multi_record_round_trip(tmp_path):
    arrs = [np.zeros((0, 3)), np.ones((2, 2, 2)), np.arange(5.0)]
    p = tmp_path / "x.eqvx"
    fileio.write_eqvx(p, arrs)
    back = fileio.read_eqvx(p)
    assert [b.shape for b in back] == [(0, 3), (2, 2, 2), (5,)]
    for a, b in zip(arrs, back):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("cut", [3, 10, 18, 25])
def test_eqvx_truncation(cut):
    raw = fileio.encode_eqvx(np.ones((2, 3)))
    with pytest.raises(fileio.FormatError):
        fileio.decode_eqvx(raw[:cut])


def test_eqvx_bad_magic():
    with pytest.raises(fileio.FormatError, match="magic"):
        fileio.decode_eqvx(b"XXXX" + b"\0" * 12)


def test_bank_round_trip(tmp_path):
    box = Box3D((5, 0, -1), (4, 2, 1.5), 0.1)
    pts = PointCloud(np.array([[5.0, 0.0, -1.0], [5.5, 0.2, -0.9]]), np.array([[0.25], [0.5]]))
    fileio.write_bank(tmp_path, [(box, pts), (box.translated((10, 0, 0)), pts)])
    bank = fileio.read_bank(tmp_path)
    assert len(bank) == 2
    np.testing.assert_array_equal(bank[0][1].xyz, pts.xyz.astype(np.float32))
    assert bank[1][0].center[0] == 15.0


def test_geo_header(tmp_path):
    p = tmp_path / "g.geo"
    fileio.write_geo_header(p, (-1.5, 2.0), (0.1, 0.1), (4, 5, 6))
    kv = fileio.read_key_values(p)
    assert float(kv["origin_x"]) == -1.5
    assert math.isclose(float(kv["pixel_y"]), 0.1)
