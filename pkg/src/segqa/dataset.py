"""Synthetic phantoms and the perturbation -> mesh -> graph -> label pipeline."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .decimate import quadric_decimate
from .errors import (
    ConfigError,
    EmptyMesh,
    FormatError,
    GateUnsatisfiable,
    InsufficientSamples,
    SegQAError,
    ShapeOutOfBounds,
)
from .mesh import MeshGraph, TriMesh, marching_cubes, mesh_to_graph, taubin_smooth, vertex_normals
from .voxel import (
    BinaryMask,
    NoiseSpec,
    SignedDistanceField,
    VoxelVolume,
    hausdorff_distance,
    load_volume,
    resample_subvolume,
    save_volume,
    signed_distance_transform,
    simulate_noise_field,
    threshold_to_mask,
    trilinear_sample,
)

log = logging.getLogger(__name__)

CLASS_NAMES = ("A", "B", "C", "D", "E")
CLASS_EDGES_MM = (-0.16, -0.1, 0.1, 0.16)
PAPER_SPLITS = (1400, 200, 600)
PAPER_HD_GATE = (7.0, 65.0)


# ---------------------------------------------------------------- binning


@dataclass(frozen=True)
class ClassBinning:
    """Five signed-distance classes in mm.

    ``A: sd < e0``, ``B: e0 <= sd < e1``, ``C: e1 <= sd <= e2``,
    ``D: e2 < sd <= e3``, ``E: sd > e3``.
    """

    edges: tuple[float, float, float, float] = CLASS_EDGES_MM
    labels: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if len(self.edges) != 4 or len(self.labels) != 5:
            raise ValueError("binning needs four edges and five labels")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bin edges must be strictly increasing")

    def classify(self, sd_mm):
        x = np.asarray(sd_mm, dtype=np.float64)
        if np.isnan(x).any():
            raise ValueError("cannot classify NaN signed distance")
        e0, e1, e2, e3 = self.edges
        cls = np.full(x.shape, 2, dtype=np.uint8)
        cls[x < e1] = 1
        cls[x < e0] = 0
        cls[x > e2] = 3
        cls[x > e3] = 4
        return int(cls) if cls.ndim == 0 else cls


DEFAULT_BINNING = ClassBinning()


def classify_sd(sd_mm, binning: ClassBinning = DEFAULT_BINNING):
    """Class index (0..4 for A..E) of a signed distance in mm; arrays map elementwise."""
    return binning.classify(sd_mm)


def class_name(index: int) -> str:
    return CLASS_NAMES[int(index)]


# ---------------------------------------------------------------- phantoms

PHANTOM_KINDS = ("sphere", "torus", "tube-loop", "blended-blobs")


@dataclass
class PhantomSpec:
    """Analytic shape plus intensity model. Sizes are in voxels."""

    kind: str = "sphere"
    dims: tuple[int, int, int] = (48, 48, 48)
    radius: float = 12.0  # sphere radius, torus/loop major radius, blob base radius
    tube_radius: float = 5.0
    n_blobs: int = 3
    spacing: float = 0.02
    foreground: float = 1.0
    background: float = 0.0
    blur_sigma: float = 1.5
    noise_sigma: float = 0.05
    margin: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; expected one of {PHANTOM_KINDS}")
        self.dims = tuple(int(d) for d in self.dims)


def _rotation(rng: np.random.Generator) -> NDArray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def phantom_sdf(spec: PhantomSpec) -> NDArray[np.float64]:
    """Analytic (approximate for blends) signed distance of the phantom shape."""
    rng = np.random.default_rng(spec.seed)
    dims = np.asarray(spec.dims, float)
    center = (dims - 1) / 2.0 + rng.uniform(-1.0, 1.0, 3)
    p = np.moveaxis(np.indices(spec.dims, dtype=np.float64), 0, -1) - center
    if spec.kind == "sphere":
        return np.linalg.norm(p, axis=-1) - spec.radius
    R = _rotation(rng)
    q = p @ R
    if spec.kind == "torus":
        ring = np.hypot(q[..., 0], q[..., 1]) - spec.radius
        return np.hypot(ring, q[..., 2]) - spec.tube_radius
    if spec.kind == "tube-loop":
        # tube around a saddle-shaped closed curve
        t = np.linspace(0.0, 2 * np.pi, 256, endpoint=False)
        curve = np.stack([spec.radius * np.cos(t), spec.radius * np.sin(t), 0.35 * spec.radius * np.sin(2 * t)], 1)
        flat = q.reshape(-1, 3)
        best = np.full(len(flat), np.inf)
        for c in curve:
            np.minimum(best, ((flat - c) ** 2).sum(1), out=best)
        return np.sqrt(best).reshape(spec.dims) - spec.tube_radius
    # blended-blobs: smooth union of spheres
    k = 3.0
    acc = np.zeros(spec.dims)
    for _ in range(spec.n_blobs):
        c = rng.normal(scale=0.45 * spec.radius, size=3)
        r = spec.radius * rng.uniform(0.45, 0.7)
        acc += np.exp(-k * (np.linalg.norm(q - c, axis=-1) - r))
    return -np.log(acc) / k


def make_phantom(spec: PhantomSpec) -> tuple[BinaryMask, VoxelVolume]:
    """Rasterised mask and a blurred, noisy intensity volume."""
    sdf = phantom_sdf(spec)
    inside = sdf <= 0
    if not inside.any():
        raise ShapeOutOfBounds(f"{spec.kind} phantom is empty on grid {spec.dims}")
    m = spec.margin
    core = np.zeros(spec.dims, bool)
    core[m:-m or None, m:-m or None, m:-m or None] = True
    if (inside & ~core).any():
        raise ShapeOutOfBounds(f"{spec.kind} phantom violates the {m}-voxel margin on grid {spec.dims}")
    grid = {"spacing": (spec.spacing,) * 3}
    mask = BinaryMask(inside.astype(np.uint8), **grid)
    soft = inside.astype(np.float64)
    if spec.blur_sigma > 0:
        soft = ndimage.gaussian_filter(soft, spec.blur_sigma, mode="nearest")
    img = spec.background + (spec.foreground - spec.background) * soft
    if spec.noise_sigma > 0:
        img = img + np.random.default_rng([spec.seed, 1]).normal(0.0, spec.noise_sigma, spec.dims)
    return mask, VoxelVolume(img, **grid)


# ---------------------------------------------------------------- perturbation


@dataclass
class Perturbation:
    perturbed_mask: BinaryMask
    X: SignedDistanceField
    X_perturbed: SignedDistanceField
    hausdorff: float
    noise: NoiseSpec
    attempts: int


def attempt_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return int(seed)
    return int(np.random.SeedSequence([int(seed), attempt]).generate_state(1, np.uint64)[0] >> 1)


def perturb_segmentation(
    true_mask: BinaryMask,
    noise: NoiseSpec,
    hd_gate=(0.0, math.inf),
    max_attempts: int = 50,
    X: SignedDistanceField | None = None,
) -> Perturbation:
    """Add structured noise to the true SDT, rejection-sampling until the gate holds.

    Attempt ``k`` uses a seed derived from ``(noise.seed, k)``. Raises
    :class:`GateUnsatisfiable` carrying the closest Hausdorff distance seen.
    """
    lo, hi = float(hd_gate[0]), float(hd_gate[1])
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid Hausdorff gate {hd_gate}")
    if X is None:
        X = signed_distance_transform(true_mask)
    closest, closest_gap = None, math.inf
    for k in range(max_attempts):
        spec_k = noise.with_seed(attempt_seed(noise.seed, k))
        Xp = simulate_noise_field(X, spec_k)
        pm = threshold_to_mask(Xp)
        if pm.values.any():
            hd = hausdorff_distance(true_mask, pm)
            if lo <= hd <= hi:
                return Perturbation(pm, X, Xp, hd, spec_k, k + 1)
            gap = lo - hd if hd < lo else hd - hi
            if gap < closest_gap:
                closest, closest_gap = hd, gap
    raise GateUnsatisfiable(
        f"no perturbation within Hausdorff gate [{lo}, {hi}] after {max_attempts} attempts (closest {closest})",
        closest_hd=closest,
    )


# ---------------------------------------------------------------- samples


@dataclass
class Sample:
    """One perturbed mesh with per-node inputs and targets.

    ``sd_labels`` are in voxels; ``class_labels`` are the A..E indices of
    ``sd_labels * spacing`` in mm.
    """

    positions: NDArray[np.float32]
    edges: NDArray[np.int64]
    faces: NDArray[np.int64]
    subvolumes: NDArray[np.float32]
    sd_labels: NDArray[np.float32]
    class_labels: NDArray[np.uint8]
    normals: NDArray[np.float32]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.positions)
        for name in ("subvolumes", "sd_labels", "class_labels", "normals"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows for {n} nodes")

    @property
    def node_count(self) -> int:
        return len(self.positions)

    @property
    def graph(self) -> MeshGraph:
        return MeshGraph(self.positions.astype(np.float64), self.edges)

    @property
    def mesh(self) -> TriMesh:
        return TriMesh(self.positions.astype(np.float64), self.faces)

    @property
    def spacing(self) -> float:
        return float(self.meta.get("spacing", 1.0))

    def sd_mm(self) -> NDArray[np.float64]:
        return self.sd_labels.astype(np.float64) * self.spacing


def build_sample(
    intensity: VoxelVolume,
    X_true: SignedDistanceField,
    perturbed_mesh: TriMesh,
    subvolume_size: int = 5,
    binning: ClassBinning = DEFAULT_BINNING,
    meta: dict | None = None,
) -> Sample:
    """Attach per-node subvolumes, signed-distance labels, classes and normals.

    Node positions are rounded to float32 first so every label can be
    recomputed bit-exactly from the stored positions.
    """
    if perturbed_mesh.is_empty:
        raise EmptyMesh("cannot build a sample from an empty mesh")
    if intensity.dims != X_true.dims:
        raise ValueError(f"grid mismatch: intensity {intensity.dims} vs SDT {X_true.dims}")
    pos = perturbed_mesh.vertices.astype(np.float32)
    mesh32 = TriMesh(pos.astype(np.float64), perturbed_mesh.faces)
    graph = mesh_to_graph(mesh32)
    sd = node_sd_labels(X_true, pos)
    spacing = X_true.spacing[0]
    meta = dict(meta or {})
    meta["spacing"] = spacing
    return Sample(
        positions=pos,
        edges=graph.edges,
        faces=perturbed_mesh.faces.copy(),
        subvolumes=resample_subvolume(intensity, pos.astype(np.float64), subvolume_size).astype(np.float32),
        sd_labels=sd,
        class_labels=binning.classify(sd.astype(np.float64) * spacing).astype(np.uint8),
        normals=vertex_normals(mesh32).astype(np.float32),
        meta=meta,
    )


def node_sd_labels(X_true: SignedDistanceField, positions) -> NDArray[np.float32]:
    """True signed distance (voxels) interpolated at node positions."""
    return np.asarray(trilinear_sample(X_true, np.asarray(positions, np.float64)), np.float32).reshape(-1)


def mask_subvolume(block, ratio: float, seed) -> tuple[NDArray, NDArray[np.bool_]]:
    """Zero ``floor(ratio * block.size)`` voxels chosen uniformly without replacement."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("mask ratio must lie in [0, 1]")
    b = np.asarray(block)
    k = math.floor(ratio * b.size)
    rng = np.random.default_rng(seed)
    indicator = np.zeros(b.size, bool)
    indicator[rng.choice(b.size, size=k, replace=False)] = True
    indicator = indicator.reshape(b.shape)
    out = b.copy()
    out[indicator] = 0
    return out, indicator


def mask_subvolumes(blocks, ratio: float, seed) -> tuple[NDArray, NDArray[np.bool_]]:
    """Independent per-node masks for a ``(N, ...)`` stack of blocks."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("mask ratio must lie in [0, 1]")
    b = np.asarray(blocks)
    n, size = len(b), int(np.prod(b.shape[1:]))
    k = math.floor(ratio * size)
    rng = np.random.default_rng(seed)
    ranks = np.argsort(rng.random((n, size)), axis=1)
    indicator = np.zeros((n, size), bool)
    np.put_along_axis(indicator, ranks[:, :k], True, axis=1)
    indicator = indicator.reshape(b.shape)
    out = b.copy()
    out[indicator] = 0
    return out, indicator


# ---------------------------------------------------------------- sample files

_SAMPLE_MAGIC = b"SEGS1\x00\x00\x00"
_SAMPLE_ARRAYS = (
    ("positions", "<f4"),
    ("edges", "<u4"),
    ("faces", "<u4"),
    ("subvolumes", "<f4"),
    ("sd_labels", "<f4"),
    ("normals", "<f4"),
    ("class_labels", "u1"),
)


def save_sample(sample: Sample, path) -> None:
    """Magic, u32 header length, JSON header, then little-endian arrays."""
    blobs, entries, offset = [], [], 0
    for name, dt in _SAMPLE_ARRAYS:
        arr = np.ascontiguousarray(getattr(sample, name), dtype=dt)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "node_count": sample.node_count,
        "edge_count": int(len(sample.edges)),
        "face_count": int(len(sample.faces)),
        "meta": sample.meta,
        "arrays": entries,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_SAMPLE_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for raw in blobs:
            fh.write(raw)


def load_sample(path) -> Sample:
    raw = Path(path).read_bytes()
    if raw[:8] != _SAMPLE_MAGIC:
        raise FormatError(f"{path}: not a sample file")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    try:
        header = json.loads(raw[12:12 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt sample header") from exc
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"]))
        start = base + e["offset"]
        if start + count * dt.itemsize > len(raw):
            raise FormatError(f"{path}: array {e['name']} truncated")
        arrays[e["name"]] = np.frombuffer(raw, dt, count, start).reshape(e["shape"]).copy()
    return Sample(
        positions=arrays["positions"].astype(np.float32),
        edges=arrays["edges"].astype(np.int64),
        faces=arrays["faces"].astype(np.int64),
        subvolumes=arrays["subvolumes"],
        sd_labels=arrays["sd_labels"],
        class_labels=arrays["class_labels"],
        normals=arrays["normals"],
        meta=header["meta"],
    )


# ---------------------------------------------------------------- generation


@dataclass
class DatasetConfig:
    """Knobs of the generation pipeline; every random choice derives from ``seed``."""

    kinds: tuple[str, ...] = PHANTOM_KINDS
    dims: tuple[int, int, int] = (48, 48, 48)
    radius_range: tuple[float, float] = (10.0, 13.0)
    tube_radius_range: tuple[float, float] = (4.5, 6.0)
    spacing: float = 0.02
    blur_sigma: float = 1.5
    noise_sigma: float = 0.05
    num_bumps: int = 4
    amplitude_range: tuple[float, float] = (2.0, 6.0)
    sigma_range: tuple[float, float] = (2.0, 5.0)
    hd_gate: tuple[float, float] = (2.0, 20.0)
    max_attempts: int = 50
    taubin_lambda: float = 0.5
    taubin_mu: float = -0.53
    taubin_iterations: int = 10
    decimate_ratio: float = 0.25
    max_nodes: int = 3000
    subvolume_size: int = 5
    seed: int = 0

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(why, key_path=f"dataset.{key}")

        unknown_kinds = set(self.kinds) - set(PHANTOM_KINDS)
        if not self.kinds or unknown_kinds:
            bad("kinds", f"kinds must be drawn from {PHANTOM_KINDS}")
        if len(self.dims) != 3 or min(self.dims) < 8:
            bad("dims", "dims must be three sizes >= 8")
        if not self.spacing > 0:
            bad("spacing", "spacing must be > 0")
        for key in ("radius_range", "tube_radius_range", "amplitude_range", "sigma_range", "hd_gate"):
            lo, hi = getattr(self, key)
            if lo > hi or lo < 0:
                bad(key, f"{key} must satisfy 0 <= low <= high")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            bad("blur_sigma" if self.blur_sigma < 0 else "noise_sigma", "must be >= 0")
        if self.num_bumps < 0:
            bad("num_bumps", "num_bumps must be >= 0")
        if self.max_attempts < 1:
            bad("max_attempts", "max_attempts must be >= 1")
        if not 0 < self.decimate_ratio <= 1:
            bad("decimate_ratio", "decimate_ratio must lie in (0, 1]")
        if self.max_nodes < 4:
            bad("max_nodes", "max_nodes must be >= 4")
        if self.subvolume_size < 1 or self.subvolume_size % 2 == 0:
            bad("subvolume_size", "subvolume_size must be odd and positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", key_path="dataset")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# Desk-scale preset for the learning checks: 8 phantoms x 12 perturbations.
# A coarser voxel (0.03 mm) and many strong bumps keep the outer classes
# populated; at 0.02 mm the A/B tails nearly vanish on 48^3 grids.
DESK_DATASET = {"spacing": 0.03, "num_bumps": 32, "amplitude_range": (4.0, 10.0), "sigma_range": (3.0, 5.0),
                "blur_sigma": 1.0, "hd_gate": (2.0, 40.0)}
DESK_SPLITS = (60, 12, 24)


def desk_config(seed: int = 0, **overrides) -> DatasetConfig:
    return DatasetConfig(**{**DESK_DATASET, "seed": seed, **overrides})


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


def phantom_spec_for(index: int, config: DatasetConfig) -> PhantomSpec:
    seed = derived_seed(config.seed, 0, index)
    rng = np.random.default_rng(seed)
    kind = config.kinds[index % len(config.kinds)]
    radius = float(rng.uniform(*config.radius_range))
    tube = float(rng.uniform(*config.tube_radius_range))
    return PhantomSpec(
        kind=kind,
        dims=tuple(config.dims),
        radius=radius,
        tube_radius=tube,
        spacing=config.spacing,
        blur_sigma=config.blur_sigma,
        noise_sigma=config.noise_sigma,
        seed=seed,
    )


def mesh_pipeline(X_perturbed: SignedDistanceField, config: DatasetConfig) -> TriMesh:
    """Marching cubes, Taubin smoothing and quadric decimation."""
    mesh = marching_cubes(X_perturbed, 0.0, strict=True)
    mesh = taubin_smooth(mesh, config.taubin_lambda, config.taubin_mu, config.taubin_iterations)
    target = max(4, min(int(round(mesh.n_faces * config.decimate_ratio)), 2 * (config.max_nodes - 2)))
    mesh = quadric_decimate(mesh, target)
    while mesh.n_vertices > config.max_nodes and mesh.n_faces > 4:
        smaller = quadric_decimate(mesh, max(4, mesh.n_faces - 2 * (mesh.n_vertices - config.max_nodes) - 2))
        if smaller.n_faces == mesh.n_faces:
            break
        mesh = smaller
    return mesh


def _as_float32(vol):
    return type(vol)(vol.values.astype(np.float32).astype(np.float64), **vol.grid_kwargs())


def generate_dataset(n_phantoms: int, perturbations_per_phantom: int, config: DatasetConfig, out_dir) -> dict:
    """Run the full pipeline and write ``manifest.json``, ``phantoms/`` and ``samples/``.

    Failed perturbations are logged in the manifest and skipped.
    """
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    (out / "phantoms").mkdir(exist_ok=True)
    noise_base = NoiseSpec(config.num_bumps, tuple(config.amplitude_range), tuple(config.sigma_range), 0)
    samples, failures, phantoms = [], [], []
    sample_id = 0
    for p in range(n_phantoms):
        spec = phantom_spec_for(p, config)
        mask, intensity = make_phantom(spec)
        # stored volumes are float32; build labels from the stored values
        X = _as_float32(signed_distance_transform(mask))
        intensity = _as_float32(intensity)
        stem = f"{p:03d}"
        save_volume(mask, out / "phantoms" / f"{stem}_mask.segv")
        save_volume(X, out / "phantoms" / f"{stem}_sdt.segv")
        save_volume(intensity, out / "phantoms" / f"{stem}_intensity.segv")
        phantoms.append({"phantom_id": p, "kind": spec.kind, "radius": spec.radius,
                         "tube_radius": spec.tube_radius, "seed": spec.seed, "files": stem})
        for k in range(perturbations_per_phantom):
            pseed = derived_seed(config.seed, 1, p, k)
            name = f"{sample_id:05d}.bin"
            try:
                pert = perturb_segmentation(mask, noise_base.with_seed(pseed), config.hd_gate, config.max_attempts, X=X)
                mesh = mesh_pipeline(pert.X_perturbed, config)
                meta = {
                    "sample_id": sample_id,
                    "phantom_id": p,
                    "perturbation": k,
                    "perturbation_seed": pseed,
                    "noise_seed": pert.noise.seed,
                    "attempts": pert.attempts,
                    "hausdorff": pert.hausdorff,
                    "hd_gate": list(config.hd_gate),
                }
                sample = build_sample(intensity, X, mesh, config.subvolume_size, meta=meta)
                save_sample(sample, out / "samples" / name)
            except SegQAError as exc:
                log.warning("phantom %d perturbation %d failed: %s", p, k, exc)
                failures.append({"phantom_id": p, "perturbation": k, "error": f"{type(exc).__name__}: {exc}"})
                continue
            entry = dict(meta, file=f"samples/{name}", node_count=sample.node_count,
                         edge_count=int(len(sample.edges)),
                         class_counts=np.bincount(sample.class_labels, minlength=5).tolist())
            samples.append(entry)
            sample_id += 1
    manifest = {
        "format": "segqa-dataset-1",
        "n_phantoms": n_phantoms,
        "perturbations_per_phantom": perturbations_per_phantom,
        "config": config.to_dict(),
        "phantoms": phantoms,
        "samples": samples,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(path.read_text())
        self._by_id = {s["sample_id"]: s for s in self.manifest["samples"]}
        self._cache: dict[int, Sample] = {}

    @property
    def sample_ids(self) -> list[int]:
        return sorted(self._by_id)

    def __len__(self):
        return len(self._by_id)

    def sample(self, sample_id: int) -> Sample:
        if sample_id not in self._cache:
            try:
                entry = self._by_id[sample_id]
            except KeyError:
                raise KeyError(f"sample {sample_id} not in dataset {self.root}") from None
            self._cache[sample_id] = load_sample(self.root / entry["file"])
        return self._cache[sample_id]

    def samples(self, ids) -> list[Sample]:
        return [self.sample(i) for i in ids]

    def phantom_volume(self, phantom_id: int, which: str) -> VoxelVolume:
        kind = {"mask": BinaryMask, "sdt": SignedDistanceField, "intensity": VoxelVolume}[which]
        return load_volume(self.root / "phantoms" / f"{phantom_id:03d}_{which}.segv", kind)


def split_dataset(manifest: dict, counts, seed: int = 0) -> dict[str, list[int]]:
    """Phantom-grouped train/val/test id lists.

    Whole phantoms are dealt to splits in a seeded order, each split taking
    groups while they fit its count, so a split may come out smaller than
    requested but never mixes perturbations of one phantom across splits.
    """
    counts = [int(c) for c in counts]
    if len(counts) != 3 or min(counts) < 0:
        raise ValueError("counts must be three non-negative integers")
    entries = manifest["samples"]
    if sum(counts) > len(entries):
        raise InsufficientSamples(f"requested {sum(counts)} samples, dataset has {len(entries)}")
    groups: dict[int, list[int]] = {}
    for s in entries:
        groups.setdefault(int(s["phantom_id"]), []).append(int(s["sample_id"]))
    order = sorted(groups)
    np.random.default_rng(seed).shuffle(order)
    names = ("train", "val", "test")
    out = {n: [] for n in names}
    remaining = list(order)
    # fill the largest request first so big groups land where they fit
    for i in sorted(range(3), key=lambda i: -counts[i]):
        left = []
        for g in remaining:
            if len(out[names[i]]) + len(groups[g]) <= counts[i]:
                out[names[i]].extend(sorted(groups[g]))
            else:
                left.append(g)
        remaining = left
    for n, c in zip(names, counts):
        if len(out[n]) < c:
            log.warning("split %s holds %d samples, %d requested (phantom grouping)", n, len(out[n]), c)
    return out
