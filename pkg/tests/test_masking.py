"""Phase wrapping, drive construction, mask shuffles, mask file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmz import ConfigError, MaskSet
from dcmz.masking import (build_drive, encode, load_masks, random_mask, save_masks,
                          shuffle_mask, wrap)


def test_wrap_pinned_values():
    assert wrap(0.0) == 0.0
    assert wrap(2.0) == pytest.approx(2.0 - np.pi, rel=0, abs=0)
    assert wrap(np.pi) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(-50.0, 50.0), st.integers(-5, 5))
@settings(max_examples=200, deadline=None)
def test_wrap_is_pi_periodic_and_bounded(z, k):
    w = wrap(z)
    assert -np.pi / 2 <= w <= np.pi / 2
    # the physical nonlinearity cannot tell wrapped from unwrapped drive
    assert np.sin(w + 0.3) ** 2 == pytest.approx(np.sin(z + 0.3) ** 2, abs=1e-9)
    assert wrap(z + k * np.pi) == pytest.approx(w, abs=1e-9)


def test_encode_matches_affine_wrap(small_masks):
    s = np.array([0.2, -0.4, 1.0])
    z = encode(s, small_masks)
    expected = wrap(small_masks.m0 + small_masks.M @ s)
    np.testing.assert_array_equal(z, expected)
    one = encode(s, small_masks, step=5)
    assert one == expected[5]


def test_build_drive_static_tiling(small_masks):
    instances = np.random.default_rng(0).uniform(0, 1, (3, 3))
    drive = build_drive(instances, small_masks, repeats=4)
    N_m = small_masks.n_m
    assert drive.z.shape == (3 * 4 * N_m,)
    assert drive.n_periods == 12
    # every repeat of an instance carries the identical period
    first = drive.z[:N_m]
    np.testing.assert_array_equal(drive.z[N_m:2 * N_m], first)
    assert list(drive.period_index[::N_m]) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]


def test_build_drive_rejects_wrong_width(small_masks):
    with pytest.raises(ConfigError, match="columns"):
        build_drive(np.zeros((2, 5)), small_masks)


def test_drive_sequence_length_must_be_whole_periods(small_masks):
    from dcmz.masking import DriveSequence
    with pytest.raises(ConfigError, match="multiple"):
        DriveSequence(z=np.zeros(13), period_index=np.zeros(13, dtype=int), N_m=8)


def test_shuffle_permutes_rows_together(small_masks):
    perm = np.array([3, 1, 0, 2, 7, 6, 5, 4])
    shuffled = shuffle_mask(small_masks, permutation=perm)
    np.testing.assert_array_equal(shuffled.m0, small_masks.m0[perm])
    np.testing.assert_array_equal(shuffled.M, small_masks.M[perm])
    # the readout and bias do not move: only timing is destroyed
    np.testing.assert_array_equal(shuffled.U, small_masks.U)
    np.testing.assert_array_equal(shuffled.y0, small_masks.y0)


def test_shuffle_with_rng_is_seed_deterministic(small_masks):
    a = shuffle_mask(small_masks, rng=np.random.default_rng(5))
    b = shuffle_mask(small_masks, rng=np.random.default_rng(5))
    assert a.content_hash() == b.content_hash()
    assert sorted(a.m0) == pytest.approx(sorted(small_masks.m0))


def test_shuffle_rejects_bad_permutation(small_masks):
    with pytest.raises(ConfigError):
        shuffle_mask(small_masks, permutation=np.array([0, 0, 1, 2, 3, 4, 5, 6]))


def test_random_mask_bounds_and_zero_readout():
    rng = np.random.default_rng(3)
    masks = random_mask(16, 5, 10, 0.25, rng)
    assert masks.m0.shape == (16,) and masks.M.shape == (16, 5)
    assert np.all(np.abs(masks.m0) <= 0.25) and np.all(np.abs(masks.M) <= 0.25)
    assert not masks.U.any() and not masks.y0.any()
    with pytest.raises(ConfigError):
        random_mask(16, 5, 10, 0.0, rng)


def test_mask_file_round_trip(tmp_path, small_masks):
    path = tmp_path / "masks.bin"
    save_masks(path, small_masks)
    loaded = load_masks(path)
    assert loaded.content_hash() == small_masks.content_hash()
    np.testing.assert_array_equal(loaded.M, small_masks.M)


def test_mask_file_rejects_corruption(tmp_path, small_masks):
    path = tmp_path / "masks.bin"
    save_masks(path, small_masks)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-16])
    with pytest.raises(ConfigError, match="payload bytes"):
        load_masks(tmp_path / "short.bin")
    (tmp_path / "stub.bin").write_bytes(raw[:20])
    with pytest.raises(ConfigError, match="truncated"):
        load_masks(tmp_path / "stub.bin")
    (tmp_path / "magic.bin").write_bytes(b"\x00" * len(raw))
    with pytest.raises(ConfigError, match="magic"):
        load_masks(tmp_path / "magic.bin")
