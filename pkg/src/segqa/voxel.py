"""Scalar fields on regular 3D grids.

Arrays are indexed ``values[i, j, k]`` with ``(i, j, k)`` the integer grid
coordinates along ``(x, y, z)``. Continuous points use the same grid
coordinates, so voxel ``(i, j, k)`` sits at point ``(i, j, k)``. Distances
are in voxel units; millimetres only appear through :meth:`to_mm`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import EmptyMask, FormatError, FullMask

__all__ = [
    "VoxelVolume",
    "BinaryMask",
    "SignedDistanceField",
    "NoiseSpec",
    "signed_distance_transform",
    "squared_distance_to",
    "threshold_to_mask",
    "simulate_noise_field",
    "noise_field",
    "bump_parameters",
    "gaussian_bumps",
    "hausdorff_distance",
    "trilinear_sample",
    "resample_subvolume",
    "save_volume",
    "load_volume",
]


@dataclass
class VoxelVolume:
    """Scalar field with grid geometry. ``spacing`` and ``origin`` are in mm."""

    values: NDArray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D array, got shape {self.values.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        if len(self.origin) != 3:
            raise ValueError("origin must have three components")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def grid_kwargs(self) -> dict:
        return {"spacing": self.spacing, "origin": self.origin}

    def to_mm(self, points: NDArray) -> NDArray:
        """Map continuous grid coordinates to physical millimetres."""
        return np.asarray(points, float) * np.asarray(self.spacing) + np.asarray(self.origin)


@dataclass
class BinaryMask(VoxelVolume):
    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if v.dtype != np.uint8:
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("mask values must be exactly 0 or 1")
            self.values = v.astype(np.uint8)
        elif v.max(initial=0) > 1:
            raise ValueError("mask values must be exactly 0 or 1")

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass
class SignedDistanceField(VoxelVolume):
    """Signed Euclidean distance, negative inside and positive outside."""

    unit_mode: str = "voxel"

    def __post_init__(self):
        super().__post_init__()
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.unit_mode not in ("voxel", "mm"):
            raise ValueError(f"unit_mode must be 'voxel' or 'mm', got {self.unit_mode!r}")

    def in_mm(self) -> "SignedDistanceField":
        if self.unit_mode == "mm":
            return self
        if len(set(self.spacing)) != 1:
            raise ValueError("mm conversion of distances requires isotropic spacing")
        return SignedDistanceField(self.values * self.spacing[0], unit_mode="mm", **self.grid_kwargs())


@dataclass
class NoiseSpec:
    """Parameters of the structured additive field.

    Each bump has magnitude drawn uniformly from ``amplitude_range`` and a
    random sign, so both in- and out-segmentation errors appear.
    """

    num_bumps: int = 4
    amplitude_range: tuple[float, float] = (2.0, 6.0)
    sigma_range: tuple[float, float] = (2.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        a0, a1 = self.amplitude_range
        s0, s1 = self.sigma_range
        if self.num_bumps < 0:
            raise ValueError("num_bumps must be >= 0")
        if a0 > a1:
            raise ValueError("amplitude_range must satisfy a_min <= a_max")
        if s0 > s1 or s1 <= 0 or s0 <= 0:
            raise ValueError("sigma_range must satisfy 0 < sigma_min <= sigma_max")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.num_bumps, tuple(self.amplitude_range), tuple(self.sigma_range), int(seed))


def _check_mask(mask: BinaryMask) -> NDArray[np.bool_]:
    inside = mask.values.astype(bool)
    if not inside.any():
        raise EmptyMask("mask has no foreground voxels")
    if inside.all():
        raise FullMask("mask has no background voxels")
    return inside


def _lower_envelope_pass(f: NDArray[np.float64]) -> NDArray[np.float64]:
    """Exact 1-D squared distance along the last axis: ``d[q] = min_p (q - p)^2 + f[p]``.

    Lower envelope of the parabolas rooted at the finite entries of each row,
    built for all rows at once. Rows without a finite entry stay infinite.
    """
    rows, n = f.shape
    finite = np.isfinite(f)
    v = np.zeros((rows, n), np.int64)  # parabola roots in the envelope
    z = np.full((rows, n + 1), np.inf)  # boundaries between them
    k = np.full(rows, -1)
    r = np.arange(rows)
    fv = f.copy()
    fv[~finite] = 0.0
    for q in range(n):
        live = finite[:, q]
        new = live & (k < 0)
        k[new] = 0
        v[new, 0] = q
        z[new, 0] = -np.inf
        z[new, 1] = np.inf
        act = live & ~new
        if not act.any():
            continue
        ia = r[act]
        ka = k[act]
        fq = fv[ia, q] + q * q

        def intersect(ka):
            p = v[ia, ka]
            return (fq - (fv[ia, p] + p * p)) / (2.0 * (q - p))

        s = intersect(ka)
        pop = s <= z[ia, ka]
        while pop.any():
            ka = ka - pop
            s = np.where(pop, intersect(ka), s)
            pop = pop & (s <= z[ia, ka])
        ka = ka + 1
        v[ia, ka] = q
        z[ia, ka] = s
        z[ia, ka + 1] = np.inf
        k[act] = ka
    out = np.full((rows, n), np.inf)
    has = k >= 0
    if not has.any():
        return out
    ih = r[has]
    kk = np.zeros(len(ih), np.int64)
    for q in range(n):
        adv = z[ih, kk + 1] < q
        while adv.any():
            kk = kk + adv
            adv = z[ih, kk + 1] < q
        p = v[ih, kk]
        out[ih, q] = (q - p) ** 2 + fv[ih, p]
    return out


def squared_distance_to(features) -> NDArray[np.float64]:
    """Exact squared Euclidean distance from every voxel to the nearest ``True`` voxel.

    One lower-envelope pass per axis; the result holds integers (``inf`` when
    there are no features).
    """
    feat = np.asarray(features, bool)
    d = np.where(feat, 0.0, np.inf)
    for axis in range(d.ndim):
        moved = np.moveaxis(d, axis, -1)
        shape = moved.shape
        d = np.moveaxis(_lower_envelope_pass(moved.reshape(-1, shape[-1])).reshape(shape), -1, axis)
    return np.ascontiguousarray(d)


def signed_distance_transform(mask: BinaryMask) -> SignedDistanceField:
    """Exact signed Euclidean distance transform in voxel units.

    Inside voxels get minus the distance to the nearest outside voxel,
    outside voxels the distance to the nearest inside voxel. Both are exact
    separable squared-distance transforms, so values are square roots of
    integers.
    """
    inside = _check_mask(mask)
    d_out = np.sqrt(squared_distance_to(inside))  # outside -> nearest inside
    d_in = np.sqrt(squared_distance_to(~inside))  # inside -> nearest outside
    values = np.where(inside, -d_in, d_out)
    return SignedDistanceField(values, **mask.grid_kwargs())


def threshold_to_mask(sdf: VoxelVolume) -> BinaryMask:
    return BinaryMask((np.asarray(sdf.values) <= 0).astype(np.uint8), **sdf.grid_kwargs())


def bump_parameters(sdf: SignedDistanceField, spec: NoiseSpec):
    """Centres (voxel positions), signed amplitudes and widths of the bumps."""
    rng = np.random.default_rng(spec.seed)
    band = np.argwhere(np.abs(sdf.values) <= 3.0 * spec.sigma_range[1])
    if len(band) == 0:
        band = np.argwhere(np.ones(sdf.dims, bool))
    idx = rng.integers(0, len(band), size=spec.num_bumps)
    centers = band[idx].astype(np.float64)
    amps = rng.uniform(*spec.amplitude_range, size=spec.num_bumps)
    signs = rng.choice((-1.0, 1.0), size=spec.num_bumps)
    sigmas = rng.uniform(*spec.sigma_range, size=spec.num_bumps)
    return centers, amps * signs, sigmas


def gaussian_bumps(dims, centers, amplitudes, sigmas) -> NDArray[np.float64]:
    """Sum of isotropic Gaussian bumps evaluated on voxel centres."""
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    out = np.zeros(dims)
    for c, a, s in zip(centers, amplitudes, sigmas):
        # separable: exp(-|p-c|^2 / 2s^2) = prod over axes
        gx, gy, gz = (np.exp(-((ax - ci) ** 2) / (2.0 * s * s)) for ax, ci in zip(axes, c))
        out += a * gx[:, None, None] * gy[None, :, None] * gz[None, None, :]
    return out


def noise_field(sdf: SignedDistanceField, spec: NoiseSpec) -> NDArray[np.float64]:
    """The additive field alone; a pure function of ``sdf`` and ``spec``."""
    if spec.num_bumps == 0:
        return np.zeros(sdf.dims)
    centers, amps, sigmas = bump_parameters(sdf, spec)
    return gaussian_bumps(sdf.dims, centers, amps, sigmas)


def simulate_noise_field(sdf: SignedDistanceField, spec: NoiseSpec) -> SignedDistanceField:
    """Return ``sdf + noise`` with Gaussian bumps centred near the zero level set."""
    if spec.num_bumps == 0:
        return SignedDistanceField(sdf.values.copy(), unit_mode=sdf.unit_mode, **sdf.grid_kwargs())
    return SignedDistanceField(sdf.values + noise_field(sdf, spec), unit_mode=sdf.unit_mode, **sdf.grid_kwargs())


def hausdorff_distance(a: BinaryMask, b: BinaryMask) -> float:
    """Symmetric Hausdorff distance between two foreground voxel sets (voxels)."""
    fa = np.asarray(a.values, bool)
    fb = np.asarray(b.values, bool)
    if not fa.any() or not fb.any():
        raise EmptyMask("Hausdorff distance needs non-empty foregrounds")
    if fa.shape != fb.shape:
        raise ValueError(f"grid mismatch: {fa.shape} vs {fb.shape}")
    to_b = squared_distance_to(fb)
    to_a = squared_distance_to(fa)
    return float(np.sqrt(max(to_b[fa].max(), to_a[fb].max())))


def trilinear_sample(vol: VoxelVolume | NDArray, points) -> NDArray[np.float64] | float:
    """Trilinear interpolation at continuous grid coordinates.

    ``points`` is a single ``(x, y, z)`` or an ``(..., 3)`` array. Points
    outside ``[0, n-1]`` are clamped to the border per axis.
    """
    values = vol.values if isinstance(vol, VoxelVolume) else np.asarray(vol)
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, 3)
    hi = np.asarray(values.shape, dtype=np.float64) - 1.0
    p = np.clip(pts, 0.0, hi)
    i0 = np.floor(p).astype(np.int64)
    i0 = np.minimum(i0, np.maximum(np.asarray(values.shape) - 2, 0))
    t = p - i0
    i1 = np.minimum(i0 + 1, np.asarray(values.shape) - 1)
    x0, y0, z0 = i0.T
    x1, y1, z1 = i1.T
    tx, ty, tz = t.T
    v = values.astype(np.float64, copy=False)
    c00 = v[x0, y0, z0] * (1 - tx) + v[x1, y0, z0] * tx
    c10 = v[x0, y1, z0] * (1 - tx) + v[x1, y1, z0] * tx
    c01 = v[x0, y0, z1] * (1 - tx) + v[x1, y0, z1] * tx
    c11 = v[x0, y1, z1] * (1 - tx) + v[x1, y1, z1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    out = (c0 * (1 - tz) + c1 * tz).reshape(lead)
    return float(out[0]) if scalar else out


_OFFSETS_CACHE: dict[int, NDArray] = {}


def _block_offsets(size: int) -> NDArray:
    if size not in _OFFSETS_CACHE:
        r = np.arange(size) - size // 2
        _OFFSETS_CACHE[size] = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).astype(np.float64)
    return _OFFSETS_CACHE[size]


def resample_subvolume(vol: VoxelVolume | NDArray, center, size: int = 5) -> NDArray[np.float64]:
    """Cubic block of trilinear samples at unit offsets around ``center``.

    ``center`` may be ``(3,)`` for a single block or ``(N, 3)`` for a stack of
    ``N`` blocks, returned as ``(N, size, size, size)``.
    """
    if size % 2 != 1:
        raise ValueError("subvolume size must be odd")
    c = np.asarray(center, dtype=np.float64)
    offs = _block_offsets(size)
    if c.ndim == 1:
        return trilinear_sample(vol, c + offs)
    return trilinear_sample(vol, c[:, None, None, None, :] + offs[None])


_MAGIC = b"SEGV1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_HEADER = struct.Struct("<5s3I3d3dB")


def save_volume(vol: VoxelVolume, path) -> None:
    """Write ``SEGV1``: header, then x-fastest little-endian voxels.

    Masks are stored as u8 (code 1), every other field as float32 (code 0).
    """
    code = 1 if isinstance(vol, BinaryMask) else 0
    data = np.asarray(vol.values, dtype=_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, *vol.dims, *vol.spacing, *vol.origin, code))
        fh.write(data.tobytes(order="F"))


def load_volume(path, kind: type[VoxelVolume] | None = None) -> VoxelVolume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the volume header")
    magic, nx, ny, nz, sx, sy, sz, ox, oy, oz, code = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    n = nx * ny * nz
    if len(raw) - _HEADER.size != n * dt.itemsize:
        raise FormatError(f"{path}: payload holds {len(raw) - _HEADER.size} bytes, expected {n * dt.itemsize}")
    values = np.frombuffer(raw, dtype=dt, offset=_HEADER.size).reshape((nx, ny, nz), order="F").copy()
    grid = {"spacing": (sx, sy, sz), "origin": (ox, oy, oz)}
    if kind is None:
        kind = BinaryMask if code == 1 else VoxelVolume
    if kind is BinaryMask:
        return BinaryMask(values, **grid)
    if kind is SignedDistanceField:
        return SignedDistanceField(values.astype(np.float64), **grid)
    return VoxelVolume(values, **grid)
