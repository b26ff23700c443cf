import struct

import numpy as np
import pytest

from fdin.data import (DATA_MAGIC, DatasetFormatError, FeatureMapSequence, SyntheticSpec, bump, generate,
                       group_by_length, planted_label, preset, read_dataset, read_sidecar, stack_frames,
                       unmix_components, write_dataset)


def _same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.subject_id == y.subject_id
        assert x.label == y.label or (np.isnan(x.label) and np.isnan(y.label))
        assert x.frames.shape == y.frames.shape
        np.testing.assert_array_equal(x.frames, y.frames)


def test_generate_shapes_and_subjects():
    spec = SyntheticSpec(n_samples=50, seed=3, t_min=5, t_max=9)
    data = generate(spec)
    assert len(data) == 50
    for s in data:
        assert s.frames.shape[1:] == (6, 6, 8) and 5 <= s.T <= 9
    counts = {}
    for s in data:
        counts[s.subject_id] = counts.get(s.subject_id, 0) + 1
    assert all(2 <= c <= 4 for c in counts.values())


def test_generate_is_deterministic():
    spec = SyntheticSpec(n_samples=20, seed=11)
    _same(generate(spec), generate(SyntheticSpec(n_samples=20, seed=11)))
    other = generate(SyntheticSpec(n_samples=20, seed=12))
    assert not np.array_equal(other[0].frames, generate(spec)[0].frames)


def test_invalid_specs():
    with pytest.raises(ValueError):
        SyntheticSpec(planted=(3, 9))
    with pytest.raises(ValueError):
        SyntheticSpec(sigma=-1.0)
    with pytest.raises(ValueError):
        SyntheticSpec(planted=(2, 2))
    with pytest.raises(ValueError):
        SyntheticSpec(height=5)
    with pytest.raises(ValueError):
        SyntheticSpec.from_dict({"bogus": 1})


def test_spec_dict_round_trip():
    spec = SyntheticSpec(contrast=(0, 2), contrast_scale=5.0, seed=4)
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec


def test_noise_free_label_depends_only_on_planted_signals():
    spec = SyntheticSpec(sigma=0.0)
    rng = np.random.default_rng(0)
    comps = [rng.normal(size=(16, 5)) for _ in range(9)]
    other = [c.copy() for c in comps]
    for k in range(9):
        if k not in spec.planted:
            other[k] = rng.normal(size=(16, 5))
        else:
            other[k][:, 1:] = rng.normal(size=(16, 4))
    assert planted_label(spec, comps, 0.0) == planted_label(spec, other, 0.0)


def test_regression_label_is_scaled_product():
    spec = SyntheticSpec(sigma=0.0)
    comps = [np.zeros((16, 5)) for _ in range(9)]
    comps[3][:, 0] = 0.5 * bump(16)
    comps[7][:, 0] = -0.8 * bump(16)
    assert planted_label(spec, comps, 0.0) == pytest.approx(40.0 + 30.0 * 0.5 * -0.8)


@pytest.mark.parametrize("kw", [dict(), dict(contrast=(0, 2), contrast_scale=15.0, shared_mixing=1.0)])
def test_label_moments_monte_carlo(kw):
    spec = SyntheticSpec(n_samples=10_000, seed=5, t_min=4, t_max=4, **kw)
    labels = np.array([s.label for s in generate(spec)])
    mean, var = spec.label_moments()
    assert abs(labels.mean() - mean) <= 0.05 * abs(mean)
    assert abs(labels.var() - var) <= 0.05 * var


def test_classification_moments_and_perfect_readout():
    spec = preset("planted-phase", n_samples=400, seed=2)
    data = generate(spec)
    labels = np.array([s.label for s in data])
    assert set(np.unique(labels)) <= {0.0, 1.0}
    assert abs(labels.mean() - spec.label_moments()[0]) < 0.1
    # read the planted channels back through the known mixing
    b = bump(spec.t_min)
    pred = []
    for s in data:
        ua = unmix_components(s, spec, spec.planted[0])[:, 0] @ b
        ub = unmix_components(s, spec, spec.planted[1])[:, 0] @ b
        pred.append(float(ua * ub > 0))
    assert np.mean(np.array(pred) == labels) == 1.0


def test_round_trip(tmp_path):
    data = generate(SyntheticSpec(n_samples=12, t_min=3, t_max=6, seed=1))
    path = tmp_path / "d.bin"
    write_dataset(data, path, sidecar={"spec": 1})
    _same(read_dataset(path), data)
    assert read_sidecar(path) == {"spec": 1}
    assert read_sidecar(tmp_path / "missing.bin") is None


def test_float32_storage(tmp_path):
    data = generate(SyntheticSpec(n_samples=4, t_min=3, t_max=3))
    write_dataset(data, tmp_path / "d.bin", dtype="float32")
    back = read_dataset(tmp_path / "d.bin")
    np.testing.assert_array_equal(back[0].frames, data[0].frames.astype(np.float32))


def test_truncated_file_names_record(tmp_path):
    data = generate(SyntheticSpec(n_samples=5, t_min=3, t_max=3))
    path = tmp_path / "d.bin"
    write_dataset(data, path)
    raw = path.read_bytes()
    per = (len(raw) - 37) // 5
    (tmp_path / "t.bin").write_bytes(raw[:37 + 2 * per + per // 2])
    with pytest.raises(DatasetFormatError, match="record 2"):
        read_dataset(tmp_path / "t.bin")


def test_bad_magic_version_and_counts(tmp_path):
    data = generate(SyntheticSpec(n_samples=3, t_min=3, t_max=3))
    path = tmp_path / "d.bin"
    write_dataset(data, path)
    raw = bytearray(path.read_bytes())
    bad = bytearray(raw)
    bad[:8] = b"NOTADATA"
    (tmp_path / "m.bin").write_bytes(bad)
    with pytest.raises(DatasetFormatError, match="magic"):
        read_dataset(tmp_path / "m.bin")
    bad = bytearray(raw)
    bad[8:12] = struct.pack("<I", 99)
    (tmp_path / "v.bin").write_bytes(bad)
    with pytest.raises(DatasetFormatError, match="version"):
        read_dataset(tmp_path / "v.bin")
    (tmp_path / "x.bin").write_bytes(bytes(raw) + b"\0\0")
    with pytest.raises(DatasetFormatError, match="trailing"):
        read_dataset(tmp_path / "x.bin")
    bad = bytearray(raw)
    struct.pack_into("<Q", bad, 28, 4)  # claim one record more than stored
    (tmp_path / "c.bin").write_bytes(bad)
    with pytest.raises(DatasetFormatError, match="record 3"):
        read_dataset(tmp_path / "c.bin")
    (tmp_path / "s.bin").write_bytes(DATA_MAGIC)
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path / "s.bin")


def test_write_rejects_mixed_shapes(tmp_path):
    a = FeatureMapSequence(np.zeros((2, 2, 2, 1)), 0.0, "a")
    b = FeatureMapSequence(np.zeros((2, 2, 3, 1)), 0.0, "b")
    with pytest.raises(ValueError):
        write_dataset([a, b], tmp_path / "d.bin")
    with pytest.raises(ValueError):
        write_dataset([], tmp_path / "d.bin")


def test_grouping_and_stacking():
    data = generate(SyntheticSpec(n_samples=20, t_min=3, t_max=5, seed=9))
    groups = group_by_length(data)
    assert sorted(i for idx in groups.values() for i in idx) == list(range(20))
    for t, idx in groups.items():
        assert stack_frames(data, idx).shape == (len(idx), t, 6, 6, 8)
    if len(groups) > 1:
        a, b = list(groups.values())[:2]
        with pytest.raises(ValueError):
            stack_frames(data, [a[0], b[0]])


def test_feature_map_sequence_validation():
    with pytest.raises(ValueError):
        FeatureMapSequence(np.zeros((0, 2, 2, 1)), 0.0, "a")


def test_presets():
    assert preset("tiny").rows == 2
    with pytest.raises(ValueError):
        preset("nope")
