"""Generators for the partition families used by the test suite and the CLI."""

from __future__ import annotations

import numpy as np

from .geometry import Space
from .mobius import (MobiusMap, Rotate, StereoAffine, mobius_apply, pullback_partition,
                     random_mobius, random_rotation)
from .partitions import PartitionSpec, make_partition, standard_flat_partition


def standard_partition(kind: str, n: int, q: int, mmap: MobiusMap | None = None, seed=0):
    """Mobius image of the standard flat q-partition, pulled back to ``kind``.

    Returns (partition, index map into the S-cells).
    """
    part = standard_flat_partition(n, q)
    if mmap is not None:
        part = mobius_apply(mmap, part)
    if kind == "S":
        return part, list(range(q))
    return pullback_partition(part, kind, seed=seed)


def random_standard_family(kind: str, n: int, q: int, count: int, seed=0) -> list:
    """``count`` random Mobius images of the standard q-partition on ``kind``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        mmap = random_mobius(n, rng)
        try:
            part, _ = standard_partition(kind, n, q, mmap, seed=seed)
        except Exception:
            continue
        out.append(part)
    return out


def _rotation_to_north(v):
    """Orthogonal matrix sending the unit vector v to e_{last}."""
    d = len(v)
    N = np.zeros(d)
    N[-1] = 1.0
    w = v - N
    if np.linalg.norm(w) < 1e-14:
        return np.eye(d)
    w /= np.linalg.norm(w)
    return np.eye(d) - 2 * np.outer(w, w)   # reflection swaps v and N


def h_cluster(n: int, q: int, seed=0, s: float = 0.3) -> PartitionSpec:
    """Spherical Voronoi cluster in H^n: q-1 bounded cells, exterior cell last."""
    rng = np.random.default_rng(seed)
    base = mobius_apply(MobiusMap((Rotate(random_rotation(n + 1, rng)),)),
                        standard_flat_partition(n, q))
    # cell 0 contains -c_0/|c_0|; send that direction to N
    c0 = -base.C[0] / np.linalg.norm(base.C[0])
    R1 = _rotation_to_north(c0)
    flip = np.eye(n + 1)
    flip[0, 0] = flip[-1, -1] = -1.0      # rotation by pi in the (e1, e_{n+1}) plane
    t = 0.1 * s * rng.standard_normal(n)
    mm = MobiusMap((Rotate(R1), StereoAffine(t, s), Rotate(flip)))
    part = mobius_apply(mm, base)
    order = list(range(1, q)) + [0]
    part = make_partition(part.space, part.C[order], part.K[order])
    hp, keep = pullback_partition(part, "H", seed=seed)
    if len(keep) != q:
        raise RuntimeError("cluster construction lost a cell")
    return hp


def geodesic_ball(n: int, rho: float) -> PartitionSpec:
    """Geodesic ball of radius rho around the apex (cell 0) and its exterior."""
    c = np.zeros(n + 1)
    c[-1] = -1.0 / np.sinh(rho)
    return make_partition(Space("H", n), [c, np.zeros(n + 1)], [1.0 / np.tanh(rho), 0.0])


def hypo_flat_H(n: int, q: int) -> PartitionSpec:
    """Standard flat partition through the apex (q <= n+1)."""
    if q > n + 1:
        raise ValueError("hypo flat construction needs q <= n+1")
    part, _ = standard_partition("H", n, q)
    return part


# ---------------------------------------------------------------------------
# flat Gaussian partitions of the plane

def gaussian_Y(center=(0.0, 0.0), angle: float = 0.0) -> PartitionSpec:
    """Three rays at 120 degrees meeting at ``center``."""
    th = angle + 2 * np.pi * np.arange(3) / 3
    C = np.stack([np.cos(th), np.sin(th)], axis=1) / np.sqrt(3.0)
    K = -C @ np.asarray(center, dtype=float)
    return make_partition(Space("G", 2), C, K)


def gaussian_parallel_lines(a: float = 0.5) -> PartitionSpec:
    """Strips separated by the lines x1 = -a and x1 = a."""
    C = np.array([[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
    return make_partition(Space("G", 2), C, [a, 0.0, a])


def lattice_patch(rows: int = 3, cols: int = 4, offset=(0.0, 0.0)) -> PartitionSpec:
    """Voronoi partition of a parallelogram patch of the unit triangular lattice.

    Every adjacent pair sits at unit distance, so all nonempty interfaces
    have |c_ij| = 1; the default patch has 12 cells.
    """
    a, b = np.array([1.0, 0.0]), np.array([0.5, np.sqrt(3) / 2])
    Z = np.array([i * a + j * b for j in range(rows) for i in range(cols)], dtype=float)
    Z -= Z.mean(axis=0) - np.asarray(offset, dtype=float)
    return make_partition(Space("G", 2), -Z, 0.5 * np.einsum("ij,ij->i", Z, Z))


def hex_patch() -> PartitionSpec:
    """Center hexagon plus its six unbounded neighbours."""
    th = np.pi / 3 * np.arange(6)
    Z = np.vstack([[0.0, 0.0], np.stack([np.cos(th), np.sin(th)], axis=1)])
    return make_partition(Space("G", 2), -Z, 0.5 * np.einsum("ij,ij->i", Z, Z))
