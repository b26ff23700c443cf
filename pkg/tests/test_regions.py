import numpy as np
import pytest

from fdin.regions import (FACE_REGION_NAMES, RegionSpec, enumerate_pairs, format_regions, grid_spec,
                          parse_regions, partition, partition_batch)

from oracles import n_choose_k, pair_index


def test_desk_grid_nine_two_by_two_windows():
    spec = grid_spec(6, 6, 3, 3)
    assert spec.n_regions == 9
    for (r0, r1), (c0, c1) in spec.windows:
        assert (r1 - r0, c1 - c0) == (2, 2)
    assert spec.region_width(512) == 2 * 2 * 512


def test_tiny_grid_centers():
    spec = grid_spec(2, 2, 2, 2)
    assert spec.n_regions == 4
    np.testing.assert_allclose(spec.centers_array(),
                               [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


def test_non_divisible_grid_rejected():
    with pytest.raises(ValueError):
        grid_spec(5, 6, 3, 3)


def test_canonical_names():
    spec = grid_spec(6, 6, 3, 3)
    assert spec.label(0) == "left eye" and spec.label(1) == "forehead" and spec.label(2) == "right eye"
    assert spec.label(3) == "left cheek" and spec.label(7) == "mouth"
    assert spec.names == FACE_REGION_NAMES
    assert grid_spec(4, 4, 2, 2).label(0) == "region 1"


def test_windows_tile_the_grid_without_overlap():
    spec = grid_spec(6, 8, 3, 4)
    cover = np.zeros((6, 8), dtype=int)
    for (r0, r1), (c0, c1) in spec.windows:
        cover[r0:r1, c0:c1] += 1
    assert np.all(cover == 1)


def test_partition_extracts_window_contents(rng):
    spec = grid_spec(6, 6, 3, 3)
    frames = rng.normal(size=(4, 6, 6, 3))
    parts = partition(frames, spec)
    assert len(parts) == 9
    np.testing.assert_array_equal(parts[4], frames[:, 2:4, 2:4, :].reshape(4, -1))
    batch = partition_batch(frames[None], spec)
    assert batch.shape == (1, 9, 4, 12)
    for k in range(9):
        np.testing.assert_array_equal(batch[0, k], parts[k])


def test_partition_shape_mismatch():
    with pytest.raises(ValueError):
        partition(np.zeros((3, 4, 4, 2)), grid_spec(6, 6, 3, 3))
    with pytest.raises(ValueError):
        partition(np.zeros((4, 4, 2)), grid_spec(4, 4, 2, 2))


def test_region_outside_grid_rejected():
    with pytest.raises(ValueError):
        RegionSpec(4, 4, (((0, 2), (0, 2)), ((2, 5), (0, 2))), ((0.25, 0.25), (0.8, 0.25)))


@pytest.mark.parametrize("n", range(2, 12))
def test_pairs_lexicographic(n):
    pairs = enumerate_pairs(n)
    assert len(pairs) == n_choose_k(n, 2)
    assert pairs == sorted(pairs)
    for k, (i, j) in enumerate(pairs):
        assert i < j and pair_index(i, j, n) == k


def test_nine_regions_give_36_pairs():
    assert len(enumerate_pairs(9)) == 36


def test_region_index_text_round_trip():
    assert format_regions([3, 7]) == "4,8"
    assert parse_regions("4,8") == [3, 7]
    assert parse_regions("") == []
    with pytest.raises(ValueError):
        parse_regions("0")
