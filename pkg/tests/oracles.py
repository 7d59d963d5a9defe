"""Independent slow reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_sq_edt(mask: np.ndarray) -> np.ndarray:
    """Squared distance of every voxel to the nearest voxel of the opposite label (integers)."""
    idx = np.argwhere(np.ones(mask.shape, bool))
    inside = np.argwhere(mask)
    outside = np.argwhere(~mask)
    out = np.zeros(mask.shape, np.int64)
    for p in idx:
        other = outside if mask[tuple(p)] else inside
        d = other - p
        out[tuple(p)] = int((d * d).sum(axis=1).min())
    return out


def brute_force_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    pa, pb = np.argwhere(a), np.argwhere(b)
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def corner_weighted_sample(values: np.ndarray, p) -> float:
    """Trilinear value as an explicit sum over the eight cell corners."""
    x, y, z = p
    i, j, k = (min(int(np.floor(c)), n - 2) for c, n in zip(p, values.shape))
    total = 0.0
    for di, dj, dk in itertools.product((0, 1), repeat=3):
        w = (1 - abs(x - (i + di))) * (1 - abs(y - (j + dj))) * (1 - abs(z - (k + dk)))
        total += w * values[i + di, j + dj, k + dk]
    return total


def point_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Exact Euclidean distance from a point to a triangle (region case analysis)."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + v * ab)))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + w * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))


def sample_surface(vertices, faces, n: int, rng) -> np.ndarray:
    """Area-weighted uniform points on a triangle mesh, plus its vertices."""
    tri = vertices[faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    pick = rng.choice(len(faces), size=n, p=area / area.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tri[pick]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
    return np.concatenate([vertices, pts])


def point_to_mesh(points, vertices, faces) -> np.ndarray:
    """Distance from each point to the nearest triangle, pruning by centroid distance."""
    tri = vertices[faces]
    cent = tri.mean(axis=1)
    rad = np.linalg.norm(tri - cent[:, None], axis=2).max(axis=1)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        dc = np.linalg.norm(cent - p, axis=1)
        bound = (dc + rad).min()
        best = np.inf
        for f in np.flatnonzero(dc - rad <= bound):
            best = min(best, point_triangle_distance(p, *tri[f]))
        out[i] = best
    return out


def sampled_hausdorff(mesh_a, mesh_b, n: int = 2000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    pa = sample_surface(mesh_a.vertices, mesh_a.faces, n, rng)
    pb = sample_surface(mesh_b.vertices, mesh_b.faces, n, rng)
    return float(max(point_to_mesh(pa, mesh_b.vertices, mesh_b.faces).max(),
                     point_to_mesh(pb, mesh_a.vertices, mesh_a.faces).max()))


def naive_softmax_attention(q, k, v) -> np.ndarray:
    """Per-head, per-query loop over keys: sum_j exp(q.k_j) v_j / sum_j exp(q.k_j)."""
    H, N, _ = q.shape
    out = np.zeros_like(v, dtype=np.float64)
    for h in range(H):
        for i in range(N):
            s = np.array([q[h, i] @ k[h, j] for j in range(N)])
            w = np.exp(s - s.max())
            out[h, i] = (w[:, None] * v[h]).sum(0) / w.sum()
    return out


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        fp = f(x)
        flat[i] = o - eps
        fm = f(x)
        flat[i] = o
        gf[i] = (fp - fm) / (2 * eps)
    return g


def analytic_sphere_sdf(n: int, radius: float, center=None) -> np.ndarray:
    c = np.full(3, (n - 1) / 2.0) if center is None else np.asarray(center, float)
    g = np.stack(np.meshgrid(*[np.arange(n, dtype=float)] * 3, indexing="ij"), axis=-1)
    return np.linalg.norm(g - c, axis=-1) - radius
