import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_hausdorff, brute_force_sq_edt, corner_weighted_sample
from segqa.errors import EmptyMask, FormatError, FullMask
from segqa.voxel import (
    BinaryMask,
    NoiseSpec,
    SignedDistanceField,
    VoxelVolume,
    bump_parameters,
    hausdorff_distance,
    load_volume,
    noise_field,
    resample_subvolume,
    save_volume,
    signed_distance_transform,
    simulate_noise_field,
    squared_distance_to,
    threshold_to_mask,
    trilinear_sample,
)


def random_mask(rng, shape, p=None):
    p = rng.uniform(0.1, 0.9) if p is None else p
    m = rng.random(shape) < p
    m.flat[0], m.flat[-1] = True, False
    return m


# ---------------------------------------------------------------- SDT


def test_sdt_single_center_voxel():
    m = np.zeros((3, 3, 3), np.uint8)
    m[1, 1, 1] = 1
    X = signed_distance_transform(BinaryMask(m)).values
    assert X[1, 1, 1] == -1.0
    assert X[0, 1, 1] == 1.0 and X[1, 2, 1] == 1.0
    assert X[0, 0, 1] == pytest.approx(math.sqrt(2), abs=1e-12)
    assert X[0, 0, 0] == pytest.approx(math.sqrt(3), abs=1e-12)
    # every value against the brute-force oracle
    sq = brute_force_sq_edt(m.astype(bool))
    np.testing.assert_array_equal(np.rint(X * X).astype(np.int64), sq)


def test_sdt_empty_and_full_rejected():
    with pytest.raises(EmptyMask):
        signed_distance_transform(BinaryMask(np.zeros((4, 4, 4))))
    with pytest.raises(FullMask):
        signed_distance_transform(BinaryMask(np.ones((4, 4, 4))))


def test_sdt_matches_brute_force_on_random_masks():
    rng = np.random.default_rng(1)
    for _ in range(20):
        shape = tuple(rng.integers(2, 9, 3))
        m = random_mask(rng, shape)
        X = signed_distance_transform(BinaryMask(m)).values
        np.testing.assert_array_equal(np.rint(X * X).astype(np.int64), brute_force_sq_edt(m))
        # sign coherence
        assert np.all(m[X < 0]) and not np.any(m[X > 0])


def test_squared_distance_matches_scipy_route():
    # second, independent implementation of the same transform
    from scipy import ndimage

    rng = np.random.default_rng(11)
    for _ in range(30):
        shape = tuple(rng.integers(1, 24, 3))
        m = rng.random(shape) < rng.uniform(0.01, 0.5)
        if not m.any():
            continue
        ref = np.rint(ndimage.distance_transform_edt(~m) ** 2)
        np.testing.assert_array_equal(squared_distance_to(m), ref)
    assert np.all(np.isinf(squared_distance_to(np.zeros((3, 4, 2), bool))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.integers(2, 10), st.integers(2, 10))
def test_threshold_round_trip(seed, nx, ny, nz):
    m = random_mask(np.random.default_rng(seed), (nx, ny, nz))
    rec = threshold_to_mask(signed_distance_transform(BinaryMask(m)))
    np.testing.assert_array_equal(rec.values, m.astype(np.uint8))


def test_sdt_bounded_by_diagonal():
    rng = np.random.default_rng(3)
    m = random_mask(rng, (12, 9, 7), p=0.05)
    X = signed_distance_transform(BinaryMask(m)).values
    assert np.abs(X).max() <= math.sqrt(12**2 + 9**2 + 7**2)


def test_threshold_boundary_inclusion():
    v = np.ones((4, 4, 4))
    assert threshold_to_mask(VoxelVolume(v)).count == 0
    v[2, 1, 3] = 0.0
    out = threshold_to_mask(VoxelVolume(v)).values
    assert out.sum() == 1 and out[2, 1, 3] == 1


def test_ball_round_trip_matches_rasterisation():
    n, r = 15, 5
    g = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1) - 7
    ball = ((g**2).sum(-1) <= r * r).astype(np.uint8)
    out = threshold_to_mask(signed_distance_transform(BinaryMask(ball)))
    np.testing.assert_array_equal(out.values, ball)


# ---------------------------------------------------------------- noise


def _sphere_sdf(n=24, r=7):
    g = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1) - n // 2
    return signed_distance_transform(BinaryMask(((g**2).sum(-1) <= r * r).astype(np.uint8)))


def test_zero_bumps_is_identity():
    X = _sphere_sdf()
    out = simulate_noise_field(X, NoiseSpec(num_bumps=0, seed=5))
    np.testing.assert_array_equal(out.values, X.values)


def test_noise_deterministic():
    X = _sphere_sdf()
    spec = NoiseSpec(num_bumps=6, seed=1234)
    a = simulate_noise_field(X, spec).values
    b = simulate_noise_field(X, spec).values
    assert np.array_equal(a, b)
    c = simulate_noise_field(X, spec.with_seed(1235)).values
    assert not np.array_equal(a, c)


def test_single_bump_peak_equals_amplitude():
    X = _sphere_sdf()
    spec = NoiseSpec(num_bumps=1, amplitude_range=(3.5, 3.5), sigma_range=(2.0, 2.0), seed=9)
    centers, amps, sigmas = bump_parameters(X, spec)
    d = simulate_noise_field(X, spec).values - X.values
    peak = np.unravel_index(np.argmax(np.abs(d)), d.shape)
    assert np.abs(d).max() == pytest.approx(3.5, abs=1e-12)
    assert np.max(np.abs(np.array(peak) - centers[0])) <= 1
    # closed-form bump at every voxel
    g = np.stack(np.meshgrid(*[np.arange(n) for n in X.dims], indexing="ij"), -1)
    closed = amps[0] * np.exp(-((g - centers[0]) ** 2).sum(-1) / (2 * sigmas[0] ** 2))
    np.testing.assert_allclose(d, closed, atol=1e-12)


def test_bump_centres_lie_in_band():
    X = _sphere_sdf()
    spec = NoiseSpec(num_bumps=50, sigma_range=(1.0, 2.0), seed=3)
    centers, amps, _ = bump_parameters(X, spec)
    vals = X.values[tuple(centers.astype(int).T)]
    assert np.all(np.abs(vals) <= 6.0)
    assert np.all((np.abs(amps) >= 2.0) & (np.abs(amps) <= 6.0))
    assert (amps > 0).any() and (amps < 0).any()


def test_noise_field_is_additive():
    X = _sphere_sdf()
    spec = NoiseSpec(num_bumps=3, seed=2)
    np.testing.assert_allclose(simulate_noise_field(X, spec).values, X.values + noise_field(X, spec))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(amplitude_range=(3, 1))
    with pytest.raises(ValueError):
        NoiseSpec(sigma_range=(0, 0))


# ---------------------------------------------------------------- Hausdorff


def test_hausdorff_examples():
    a = np.zeros((5, 2, 2), np.uint8)
    b = a.copy()
    a[0, 0, 0] = 1
    b[3, 0, 0] = 1
    assert hausdorff_distance(BinaryMask(a), BinaryMask(b)) == 3.0
    assert hausdorff_distance(BinaryMask(a), BinaryMask(a)) == 0.0
    with pytest.raises(EmptyMask):
        hausdorff_distance(BinaryMask(a), BinaryMask(np.zeros_like(a)))


def test_hausdorff_symmetric_and_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(15):
        shape = tuple(rng.integers(2, 8, 3))
        a, b = random_mask(rng, shape, 0.2), random_mask(rng, shape, 0.3)
        hab = hausdorff_distance(BinaryMask(a), BinaryMask(b))
        assert hab == hausdorff_distance(BinaryMask(b), BinaryMask(a))
        assert hab == pytest.approx(brute_force_hausdorff(a, b), abs=1e-12)


# ---------------------------------------------------------------- sampling


def test_trilinear_examples():
    rng = np.random.default_rng(5)
    v = rng.random((6, 5, 4))
    assert trilinear_sample(v, (2, 3, 1)) == v[2, 3, 1]
    two = np.zeros((2, 1, 1))
    two[1] = 1
    assert trilinear_sample(two, (0.5, 0, 0)) == 0.5


def test_trilinear_against_corner_oracle():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((7, 6, 5))
    pts = rng.random((200, 3)) * (np.array(v.shape) - 1)
    got = trilinear_sample(v, pts)
    ref = np.array([corner_weighted_sample(v, p) for p in pts])
    np.testing.assert_allclose(got, ref, atol=1e-12, rtol=0)


def test_trilinear_exact_on_affine_fields():
    g = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), -1)
    coef = np.array([0.3, -1.7, 2.2])
    f = g @ coef + 0.9
    pts = np.random.default_rng(7).random((300, 3)) * 7
    np.testing.assert_allclose(trilinear_sample(f, pts), pts @ coef + 0.9, atol=1e-10, rtol=0)


def test_trilinear_clamps_outside():
    v = np.arange(27.0).reshape(3, 3, 3)
    assert trilinear_sample(v, (-4, 1, 1)) == v[0, 1, 1]
    assert trilinear_sample(v, (1, 9, 2)) == v[1, 2, 2]


def test_subvolume_constant_boundary_and_centre():
    c = VoxelVolume(np.full((12, 12, 12), 2.5))
    np.testing.assert_array_equal(resample_subvolume(c, (6, 6, 6)), 2.5)
    v = np.random.default_rng(8).random((10, 10, 10))
    block = resample_subvolume(v, (0, 4, 9))
    # border replication: x offsets -2, -1 clamp to x = 0
    np.testing.assert_array_equal(block[0], block[2])
    np.testing.assert_array_equal(block[:, :, 3], block[:, :, 2])
    p = np.array([3.3, 4.7, 5.1])
    assert resample_subvolume(v, p)[2, 2, 2] == trilinear_sample(v, p)
    stack = resample_subvolume(v, np.array([p, p + 1]))
    assert stack.shape == (2, 5, 5, 5)
    np.testing.assert_array_equal(stack[0], resample_subvolume(v, p))
    with pytest.raises(ValueError):
        resample_subvolume(v, p, size=4)


# ---------------------------------------------------------------- file format


def test_volume_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    vol = VoxelVolume(rng.random((4, 3, 2)).astype(np.float32), spacing=(0.02, 0.02, 0.03), origin=(1, 2, 3))
    save_volume(vol, tmp_path / "v.segv")
    back = load_volume(tmp_path / "v.segv")
    np.testing.assert_array_equal(back.values, vol.values)
    assert back.spacing == vol.spacing and back.origin == vol.origin
    raw = (tmp_path / "v.segv").read_bytes()
    assert raw[:5] == b"SEGV1"
    # x-fastest: second stored voxel is (1, 0, 0)
    first = np.frombuffer(raw[-4 * 24:], "<f4")
    assert first[1] == vol.values[1, 0, 0]

    m = BinaryMask(rng.random((3, 3, 3)) < 0.5)
    save_volume(m, tmp_path / "m.segv")
    back = load_volume(tmp_path / "m.segv", BinaryMask)
    assert isinstance(back, BinaryMask)
    np.testing.assert_array_equal(back.values, m.values)


def test_volume_bad_files(tmp_path):
    (tmp_path / "x.segv").write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        load_volume(tmp_path / "x.segv")


def test_mask_values_validated():
    with pytest.raises(ValueError):
        BinaryMask(np.full((2, 2, 2), 2))
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((2, 2, 2)), spacing=(1, 0, 1))


def test_sdf_mm_conversion():
    X = SignedDistanceField(np.full((2, 2, 2), 3.0), spacing=(0.02,) * 3)
    mm = X.in_mm()
    assert mm.unit_mode == "mm" and mm.values[0, 0, 0] == pytest.approx(0.06)
