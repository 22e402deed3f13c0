import numpy as np
import pytest

from sadcl import data
from sadcl.data import SyntheticSpec, batches, class_signatures, generate, tile_mask, tile_slices
from sadcl.errors import CorruptDatasetError, ParameterError


def small(**kw):
    base = dict(num_classes=4, height=4, width=4, channels=3, cardinality=1.5, cooccurrence={},
                noise=0.3, n_train=40, n_test=10, seed=5)
    base.update(kw)
    return SyntheticSpec(**base)


def test_noiseless_single_class_grid_is_its_signature():
    spec = small(noise=0.0, single_label=True, alpha=2.0)
    ds = generate(spec)
    sigs = class_signatures(spec)
    slices = tile_slices(spec)
    for grid, y in zip(ds.train_x, ds.train_y):
        (j,) = np.flatnonzero(y)
        rs, cs = slices[j]
        expected = np.zeros_like(grid)
        expected[rs, cs] = 2.0 * sigs[j]
        assert np.array_equal(grid, expected)


def test_tiles_are_disjoint_and_cover_default_grid():
    spec = SyntheticSpec()
    masks = np.stack([tile_mask(spec, j) for j in range(spec.num_classes)])
    assert masks.sum(axis=0).max() == 1
    assert masks.sum() == spec.height * spec.width
    # row-major: class 1 sits right of class 0
    assert tile_slices(spec)[1][1].start > tile_slices(spec)[0][1].start


def test_cardinality_without_boosts():
    spec = small(num_classes=10, cardinality=2.9, n_train=10_000, n_test=0, height=4, width=4)
    ds = generate(spec)
    assert abs(ds.mean_cardinality("train") - 2.9) <= 0.29
    assert ds.base_rate == pytest.approx(0.29)


def test_cardinality_with_default_boosts():
    spec = SyntheticSpec(n_train=10_000, n_test=0, channels=1)
    ds = generate(spec)
    assert abs(ds.mean_cardinality("train") - 2.9) <= 0.29


@pytest.mark.parametrize("pair", [(0, 1), (2, 3), (4, 5)])
def test_boosted_pair_raises_conditional_frequency(pair):
    spec = SyntheticSpec(n_train=10_000, n_test=0, channels=1)
    ds = generate(spec)
    j, k = pair
    y = ds.train_y
    conditional = y[y[:, j] == 1, k].mean()
    factor = 1.0 + spec.cooccurrence[pair]
    assert abs(conditional / ds.base_rate - factor) <= 0.2 * factor


def test_labels_are_binary_with_length_l():
    ds = generate(small())
    assert ds.train_y.shape == (40, 4) and set(np.unique(ds.train_y)) <= {0, 1}


def test_generation_is_pure():
    a, b = generate(small()), generate(small())
    assert np.array_equal(a.train_x, b.train_x) and np.array_equal(a.test_y, b.test_y)
    c = generate(small(seed=6))
    assert not np.array_equal(a.train_x, c.train_x)


def test_infeasible_specs():
    with pytest.raises(ParameterError):
        small(cardinality=4.0)
    with pytest.raises(ParameterError):
        small(cooccurrence={(1, 1): 1.0})
    with pytest.raises(ParameterError):
        small(cooccurrence={(0, 1): -1.0})
    with pytest.raises(ParameterError):
        small(num_classes=16, height=3)


def test_spec_dict_round_trip():
    spec = SyntheticSpec()
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec


def test_save_load_round_trip(tmp_path):
    ds = generate(small())
    path = tmp_path / "ds.bin"
    data.save(ds, path)
    back = data.load(path)
    for name in ("train_x", "train_y", "test_x", "test_y"):
        a, b = getattr(ds, name), getattr(back, name)
        assert a.dtype == b.dtype and np.array_equal(a, b)
    assert back.spec == ds.spec and back.base_rate == ds.base_rate


def test_two_saves_have_identical_checksums(tmp_path):
    a = data.save(generate(small()), tmp_path / "a.bin")
    b = data.save(generate(small()), tmp_path / "b.bin")
    assert a == b
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_truncated_file_is_corrupt(tmp_path):
    path = tmp_path / "ds.bin"
    data.save(generate(small()), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(CorruptDatasetError):
        data.load(path)


def test_flipped_byte_fails_checksum(tmp_path):
    path = tmp_path / "ds.bin"
    data.save(generate(small()), path)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptDatasetError, match="checksum"):
        data.load(path)


def test_wrong_magic_and_missing_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"hello\n{}\n")
    with pytest.raises(CorruptDatasetError):
        data.load(path)
    with pytest.raises(OSError, match="nope.bin"):
        data.load(tmp_path / "nope.bin")


def test_full_batch_keeps_order():
    (only,) = list(batches(7, 7))
    assert only.tolist() == list(range(7))


def test_partial_batch_retained():
    sizes = [len(b) for b in batches(10, 4, shuffle_seed=1)]
    assert sizes == [4, 4, 2]


def test_shuffle_is_deterministic_per_epoch_and_covers_all():
    first = [b.tolist() for b in batches(23, 5, shuffle_seed=3, epoch=0)]
    again = [b.tolist() for b in batches(23, 5, shuffle_seed=3, epoch=0)]
    other = [b.tolist() for b in batches(23, 5, shuffle_seed=3, epoch=1)]
    assert first == again and first != other
    for seq in (first, other):
        assert sorted(i for b in seq for i in b) == list(range(23))


def test_batch_size_must_be_positive():
    with pytest.raises(ParameterError):
        list(batches(3, 0))
