import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermavatar.errors import (
    DimensionMismatch,
    InvalidMask,
    InvalidSequence,
    MissingFrames,
    ShapeInconsistent,
    UnreadableFile,
)
from thermavatar.thermal_data import (
    HeatMatrix,
    RoiMask,
    frames_from_arrays,
    load_mask,
    load_roi,
    load_sequence,
    save_mask,
    save_sequence,
    stack_vectorize,
    unstack,
)


def _seq(tau=5, m=8, n=8, seed=0):
    return frames_from_arrays(list(np.random.default_rng(seed).normal(30, 2, (tau, m, n))))


def test_row_major_column():
    seq = frames_from_arrays([np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros((2, 2))])
    x = stack_vectorize(seq)
    assert x.data[:, 0].tolist() == [1.0, 2.0, 3.0, 4.0]
    assert x.frame_shape == (2, 2)


def test_unstack_column_to_frame():
    data = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]])
    seq = unstack(HeatMatrix(data, 2, 2))
    assert seq.frames[0].tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_heat_matrix_shape_check():
    with pytest.raises(ShapeInconsistent):
        HeatMatrix(np.zeros((8, 3)), 3, 3)


def test_full_size_heat_matrix():
    seq = _seq(23, 64, 64)
    x = stack_vectorize(seq)
    assert x.data.shape == (4096, 23)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 7), st.integers(2, 7)),
              elements=st.floats(-1e6, 1e6)))
def test_round_trip_bit_exact(frames):
    seq = frames_from_arrays(list(frames))
    back = unstack(stack_vectorize(seq))
    assert np.array_equal(back.frames, seq.frames)
    x = stack_vectorize(seq)
    assert np.array_equal(stack_vectorize(unstack(x)).data, x.data)
    for t in range(seq.tau):
        col = x.data[:, t]
        assert col.min() == frames[t].min() and col.max() == frames[t].max()
        assert col.mean() == pytest.approx(frames[t].mean(), rel=1e-12, abs=1e-9)


def test_sequence_validation():
    with pytest.raises(InvalidSequence):
        frames_from_arrays([np.zeros((4, 4))])
    with pytest.raises(InvalidSequence):
        frames_from_arrays([np.zeros((4, 4)), np.full((4, 4), np.nan)])
    with pytest.raises(DimensionMismatch):
        frames_from_arrays([np.zeros((4, 4)), np.zeros((3, 3))])
    seq = _seq()
    with pytest.raises(ValueError):
        seq.frames[0, 0, 0] = 1.0


def test_csv_round_trip(tmp_path):
    seq = _seq(23, 64, 64)
    save_sequence(seq, tmp_path / "f")
    back = load_sequence(tmp_path / "f")
    assert back.tau == 23 and back.shape == (64, 64)
    assert np.array_equal(back.frames, seq.frames)
    assert back.value_scale == "raw"


@pytest.mark.parametrize("fmt", ["png16", "pgm16"])
def test_u16_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(1)
    frames = rng.integers(0, 65536, size=(3, 6, 5)) / 65535.0
    save_sequence(frames_from_arrays(list(frames)), tmp_path / "f", format=fmt)
    back = load_sequence(tmp_path / "f", format=fmt)
    assert np.array_equal(back.frames, frames)
    assert back.value_scale == "unit"


def test_lexicographic_order(tmp_path):
    for name, v in [("b.csv", 2.0), ("a.csv", 1.0), ("c.csv", 3.0)]:
        np.savetxt(tmp_path / name, np.full((2, 2), v), delimiter=",")
    seq = load_sequence(tmp_path)
    assert seq.frames[:, 0, 0].tolist() == [1.0, 2.0, 3.0]


def test_load_errors(tmp_path):
    np.savetxt(tmp_path / "a.csv", np.zeros((4, 4)), delimiter=",")
    with pytest.raises(MissingFrames):
        load_sequence(tmp_path)
    np.savetxt(tmp_path / "b.csv", np.zeros((3, 3)), delimiter=",")
    with pytest.raises(DimensionMismatch):
        load_sequence(tmp_path)
    (tmp_path / "b.csv").write_text("x,y\n1,2\n")
    with pytest.raises(UnreadableFile):
        load_sequence(tmp_path)
    with pytest.raises(MissingFrames):
        load_sequence(tmp_path / "absent")


def test_masks(tmp_path):
    mask = np.zeros((6, 6), dtype=bool)
    mask[2:4, 2:4] = True
    ref = np.zeros((6, 6), dtype=bool)
    ref[0, :] = True
    save_mask(mask, tmp_path / "roi.png")
    save_mask(ref, tmp_path / "ref.png")
    assert np.array_equal(load_mask(tmp_path / "roi.png"), mask)
    roi = load_roi(tmp_path / "roi.png", tmp_path / "ref.png")
    assert np.array_equal(roi.reference_mask, ref)
    with pytest.raises(InvalidMask):
        RoiMask(np.zeros((4, 4)))
    with pytest.raises(InvalidMask):
        RoiMask(mask, mask)
