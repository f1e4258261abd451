import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npsdo.errors import DimensionError, FormatError
from npsdo.scene import (AIR, FLUID, SOLID, CellType, IndicatorImage, SceneSpec, box, cell_type,
                         disc, half_space, pad_image, random_scene, rasterize, read_scn, write_scn)


def count_by_loop(spec):
    """Direct per-cell rasterization: last primitive covering the centre wins."""
    nx, ny = spec.dims
    labels = np.zeros(spec.dims, dtype=int)
    code = {"fluid": FLUID, "air": AIR, "solid": SOLID}
    for i in range(nx):
        for j in range(ny):
            c = [np.array(i + 0.5), np.array(j + 0.5)]
            for p in spec.primitives:
                if p.mask(c):
                    labels[i, j] = code[p.tag]
    return labels


def test_empty_spec_is_all_fluid():
    I = rasterize(SceneSpec((8, 8)))
    assert np.all(I.data[0] == 1) and np.all(I.data[1:] == 0)


def test_half_planes_counts():
    spec = SceneSpec((8, 8), (half_space(0, 2, "solid", below=True),
                              half_space(0, 6, "air", below=False)))
    I = rasterize(spec)
    assert (I.count(SOLID), I.count(AIR), I.count(FLUID)) == (16, 16, 32)
    np.testing.assert_array_equal(I.labels(), count_by_loop(spec))


def test_zero_radius_disc_changes_nothing():
    I = rasterize(SceneSpec((8, 8), (disc((4, 4), 0.0, "solid"),)))
    assert I.count(FLUID) == 64


@pytest.mark.parametrize("seed", range(10))
def test_random_scenes_match_loop_oracle(seed):
    spec = random_scene((16, 16), seed)
    I = rasterize(spec)
    assert I.is_one_hot() and I.channel_sum_ok()
    np.testing.assert_array_equal(I.labels(), count_by_loop(spec))
    assert rasterize(spec) == I


def test_divisibility_checked():
    with pytest.raises(DimensionError):
        rasterize(SceneSpec((12, 16)), depth=3)
    rasterize(SceneSpec((16, 16)), depth=4)


def test_pad_image_rules():
    I = IndicatorImage.all_fluid((2, 2))
    assert pad_image(I, 0) == I
    P = pad_image(I, 1)
    assert P.dims == (4, 4)
    assert P.count(SOLID) == 12 and P.count(FLUID) == 4
    assert P.channel_sum_ok()


@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 50))
@settings(max_examples=25, deadline=None)
def test_pad_composes(a, b, seed):
    I = rasterize(random_scene((8, 8), seed))
    assert pad_image(I, a + b) == pad_image(pad_image(I, a), b)


def test_cell_type():
    labels = np.zeros((2, 2), dtype=int)
    labels[0, 1] = AIR
    labels[1, 1] = SOLID
    I = IndicatorImage.from_labels(labels)
    assert cell_type(I, 0, 0) == CellType.FLUID
    assert cell_type(I, 0, 1) == CellType.AIR
    assert cell_type(I, 1, 1) == CellType.SOLID
    with pytest.raises(IndexError):
        cell_type(I, 2, 0)


def test_one_hot_enforced():
    data = np.zeros((3, 2, 2), dtype=np.float32)
    data[0] = 0.5
    data[1] = 0.5
    assert not IndicatorImage(data).is_one_hot()
    assert IndicatorImage(data).channel_sum_ok()


def test_scn_round_trip(tmp_path):
    I = rasterize(random_scene((16, 8), 3))
    write_scn(tmp_path / "a.scn", I)
    assert read_scn(tmp_path / "a.scn") == I
    raw = (tmp_path / "a.scn").read_bytes()
    assert raw[:4] == b"NPSC"
    (tmp_path / "b.scn").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_scn(tmp_path / "b.scn")
    (tmp_path / "c.scn").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_scn(tmp_path / "c.scn")


def test_spec_json_round_trip(tmp_path):
    spec = SceneSpec((8, 8), (box((1, 1), (3, 4), "solid"), disc((5, 5), 2, "air", growth=1.0),
                              half_space(1, 6, "air", below=False)), seed=4, name="x")
    spec.save_json(tmp_path / "s.json")
    back = SceneSpec.load_json(tmp_path / "s.json")
    assert back == spec
    assert rasterize(back, t=0.7) == rasterize(spec, t=0.7)


def test_spec_rejects_out_of_domain():
    with pytest.raises(ValueError):
        SceneSpec((8, 8), (box((9, 9), (12, 12)),))
    with pytest.raises(ValueError):
        SceneSpec((8, 8), (disc((20, 4), 1.0),))
