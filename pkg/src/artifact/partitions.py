"""Spherical Voronoi partitions on S^n, R^n, H^n and flat partitions on G^n.

Scores (cell = argmin):

* S: <c, p> + k
* R: k |x|^2 + 2 <c, x> + 2 kS - k
* H: <c, y>_1 - k
* G: <c, x> + k

Interfaces use differences ``c_ij = c_i - c_j`` and ``k_ij = k_i - k_j``; the
normal ``n_ij = c_ij + k_ij p`` points from cell i into cell j.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.stats import norm, qmc

from .errors import ContractError, EmptyJunctionError, MalformedPartitionError
from .geometry import GeneralizedSphere, Space, inner, on_space_residual

TIE_TOL = 1e-12
MEMBER_TOL = 1e-9
CONSISTENCY_TOL = 1e-8
DEFAULT_SAMPLES = 4096


@dataclass(frozen=True)
class CellParams:
    c: np.ndarray
    k: float
    kS: Optional[float] = None

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ContractError("cell quasi-center must be a finite vector")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", float(self.k))
        if self.kS is not None:
            object.__setattr__(self, "kS", float(self.kS))

    def key(self):
        return (tuple(self.c.tolist()), self.k, self.kS)


@dataclass(frozen=True)
class PartitionSpec:
    space: Space
    cells: tuple

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        if not 2 <= len(cells) <= 64:
            raise ContractError(f"number of cells {len(cells)} outside [2, 64]")
        for cell in cells:
            if cell.c.shape[0] != self.space.dim:
                raise ContractError(f"cell vector length {cell.c.shape[0]} != {self.space.dim}")
            if (self.space.kind == "R") != (cell.kS is not None):
                raise ContractError("kS must be present exactly for R partitions")
            if not np.isfinite(cell.k) or (cell.kS is not None and not np.isfinite(cell.kS)):
                raise ContractError("non-finite cell curvature")
        if len({c.key() for c in cells}) != len(cells):
            raise ContractError("cell parameters must be pairwise distinct")

    @property
    def q(self) -> int:
        return len(self.cells)

    @property
    def C(self) -> np.ndarray:
        return np.array([c.c for c in self.cells])

    @property
    def K(self) -> np.ndarray:
        return np.array([c.k for c in self.cells])

    @property
    def KS(self) -> np.ndarray:
        return np.array([c.kS for c in self.cells], dtype=float)

    def to_json(self) -> dict:
        cells = []
        for c in self.cells:
            d = {"c": [float(v) for v in c.c], "k": float(c.k)}
            if c.kS is not None:
                d["kS"] = float(c.kS)
            cells.append(d)
        return {"space": self.space.to_json(), "cells": cells}

    @classmethod
    def from_json(cls, data: dict) -> "PartitionSpec":
        try:
            space = Space(str(data["space"]["kind"]), int(data["space"]["n"]))
            cells = [CellParams(c["c"], c["k"], c.get("kS")) for c in data["cells"]]
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed partition JSON: missing field {exc}") from exc
        return cls(space, tuple(cells))


def make_partition(space: Space, C, K, KS=None) -> PartitionSpec:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    K = np.asarray(K, dtype=float)
    KS = [None] * len(K) if KS is None else [float(v) for v in KS]
    return PartitionSpec(space, tuple(CellParams(c, k, ks) for c, k, ks in zip(C, K, KS)))


# ---------------------------------------------------------------------------
# standard partitions

def equidistant_points(q: int, n: int) -> np.ndarray:
    """q unit vectors in R^{n+1}, zero sum, pairwise products -1/(q-1)."""
    if not 2 <= q <= n + 2:
        raise ContractError(f"q={q} outside [2, n+2] for n={n}")
    # simplex vertices in R^q, centered, then expressed in an orthonormal basis
    # of the sum-zero hyperplane whose first vector is along vertex 0
    V = np.eye(q) - 1.0 / q
    V /= np.linalg.norm(V[0])
    basis = [V[0]]
    for e in np.eye(q)[1:]:
        e = e - 1.0 / q
        for b in basis:
            e = e - (e @ b) * b
        nrm = np.linalg.norm(e)
        if nrm > 1e-12:
            basis.append(e / nrm)
    B = np.array(basis)                      # (q-1, q)
    pts = np.zeros((q, n + 1))
    pts[:, : q - 1] = V @ B.T
    return pts


def standard_flat_partition(n: int, q: int) -> PartitionSpec:
    R = np.sqrt((q - 1) / (2.0 * q))
    return make_partition(Space("S", n), R * equidistant_points(q, n), np.zeros(q))


# ---------------------------------------------------------------------------
# scores and membership

def scores(part: PartitionSpec, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    C, K = part.C, part.K
    kind = part.space.kind
    if kind in ("S", "G"):
        return P @ C.T + K
    if kind == "H":
        return inner(P[..., None, :], C, "lorentzian") - K
    x2 = np.einsum("...i,...i->...", P, P)[..., None]
    return K * x2 + 2 * P @ C.T + 2 * part.KS - K


def sphere_lift(part: PartitionSpec):
    """Cell parameters on S^n whose scores are positive multiples of the native scores."""
    from .mobius import params_S_from_H, params_S_from_R

    kind = part.space.kind
    if kind == "S":
        return part.C, part.K
    if kind == "R":
        return params_S_from_R(part.C, part.K, part.KS)
    if kind == "H":
        return params_S_from_H(part.C, part.K)
    raise ContractError("Gaussian partitions have no spherical lift")


def _check_on_space(space, P, tol=1e-8):
    r = on_space_residual(space, P)
    if np.any(r > tol):
        raise ContractError("point is not on the model space")


def cell_of(part: PartitionSpec, p) -> Optional[int]:
    p = np.asarray(p, dtype=float)
    _check_on_space(part.space, p)
    s = scores(part, p)
    order = np.argsort(s, kind="stable")
    if s[order[1]] - s[order[0]] <= TIE_TOL * max(1.0, abs(s[order[0]])):
        return None
    return int(order[0])


def cells_of(part: PartitionSpec, P, gap: float = TIE_TOL) -> np.ndarray:
    """Vectorized cell_of; -1 marks points within ``gap`` of a tie."""
    s = scores(part, P)
    srt = np.sort(s, axis=-1)
    idx = np.argmin(s, axis=-1)
    return np.where(srt[..., 1] - srt[..., 0] > gap, idx, -1)


def curvature_diff(part: PartitionSpec, i: int, j: int) -> float:
    """Principal curvature k_ij of the interface (0 on Gaussian space)."""
    return 0.0 if part.space.kind == "G" else part.cells[i].k - part.cells[j].k


def interface_sphere(part: PartitionSpec, i: int, j: int, validate: bool = True) -> GeneralizedSphere:
    if i == j:
        raise ContractError("interface needs two distinct cells")
    a, b = part.cells[i], part.cells[j]
    kS = a.kS - b.kS if part.space.kind == "R" else None
    sph = GeneralizedSphere(part.space, a.c - b.c, a.k - b.k, kS)
    if validate:
        r = sph.consistency_residual()
        if r > CONSISTENCY_TOL:
            raise MalformedPartitionError(
                f"interface ({i},{j}) fails the sphere relation (residual {r:.3e})")
    return sph


# ---------------------------------------------------------------------------
# sampling

def normal_samples(count: int, dim: int, seed) -> np.ndarray:
    """Scrambled Sobol points pushed through the normal quantile (fresh copy)."""
    return _normal_samples(int(count), int(dim), int(seed)).copy()


@lru_cache(maxsize=256)
def _normal_samples(count, dim, seed):
    eng = qmc.Sobol(dim, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(count, 2))))
    U = eng.random_base2(m)[:count]
    Z = norm.ppf(np.clip(U, 1e-12, 1 - 1e-12))
    Z.setflags(write=False)
    return Z


def _sphere_in_lift(c, k, count, seed):
    """Points of {p in S^n : <c,p> + k = 0}, uniform in the round metric."""
    c = np.asarray(c, dtype=float)
    c2 = c @ c
    if c2 < 1e-24:
        return np.zeros((0, c.shape[0]))
    r2 = 1.0 - k * k / c2
    if r2 <= 0:
        return np.zeros((0, c.shape[0]))
    Z = normal_samples(count, c.shape[0], seed)
    Z -= np.outer(Z @ c / c2, c)
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return -k * c / c2 + np.sqrt(r2) * Z


def _native_from_lift(space: Space, P):
    from .mobius import stereo_H_inv, stereo_R_inv

    if space.kind == "S":
        return P
    if space.kind == "R":
        keep = P[:, -1] < 1 - 1e-9
        return stereo_R_inv(P[keep])
    keep = P[:, -1] > 1e-9
    return stereo_H_inv(P[keep])


def _region_mask(space: Space, P, radius):
    if radius is None or space.kind == "S":
        return np.ones(len(P), dtype=bool)
    if space.kind == "H":
        return P[:, -1] <= np.cosh(radius)
    return np.linalg.norm(P, axis=1) <= radius


def sphere_samples(part: PartitionSpec, i: int, j: int, count: int = DEFAULT_SAMPLES,
                   seed=0, radius: Optional[float] = None) -> np.ndarray:
    """Seeded points of the full generalized sphere S_ij in native coordinates."""
    if part.space.kind == "G":
        sph = interface_sphere(part, i, j, validate=False)
        c2 = sph.c @ sph.c
        base = -sph.k * sph.c / c2
        E = null_space(sph.c[None])
        R = 8.0 if radius is None else radius
        Z = normal_samples(count, E.shape[1] + 1, seed)
        # uniform in the disc of radius R inside the hyperplane
        d = Z[:, :-1] / np.linalg.norm(Z[:, :-1], axis=1, keepdims=True)
        rad = R * norm.cdf(Z[:, -1]) ** (1.0 / E.shape[1])
        return base + (d * rad[:, None]) @ E.T
    C, K = sphere_lift(part)
    P = _sphere_in_lift(C[i] - C[j], K[i] - K[j], count, seed)
    P = _native_from_lift(part.space, P)
    return P[_region_mask(part.space, P, radius)]


def interface_membership_gap(part: PartitionSpec, i: int, j: int, P):
    """min over other cells of (score_l - max(score_i, score_j)), in lifted units."""
    if part.space.kind == "G":
        s = scores(part, P)
    else:
        C, K = sphere_lift(part)
        L = P
        if part.space.kind != "S":
            from .mobius import stereo_H, stereo_R
            L = stereo_R(P) if part.space.kind == "R" else stereo_H(P)
        s = L @ C.T + K
    others = np.delete(s, [i, j], axis=1)
    top = np.maximum(s[:, i], s[:, j])
    if others.shape[1] == 0:
        return np.full(len(P), np.inf)
    return others.min(axis=1) - top


def interface_samples(part: PartitionSpec, i: int, j: int, count: int = DEFAULT_SAMPLES,
                      seed=0, radius: Optional[float] = None) -> np.ndarray:
    """Sampled points of the open interface Sigma_ij."""
    P = sphere_samples(part, i, j, count, seed, radius)
    if len(P) == 0:
        return P
    return P[interface_membership_gap(part, i, j, P) > MEMBER_TOL]


def interface_nonempty(part: PartitionSpec, i: int, j: int,
                       sampler_count: int = DEFAULT_SAMPLES, seed=0) -> bool:
    if i == j:
        raise ContractError("interface needs two distinct cells")
    return len(interface_samples(part, i, j, sampler_count, seed)) > 0


def nonempty_pairs(part: PartitionSpec, sampler_count: int = DEFAULT_SAMPLES, seed=0):
    return [(i, j) for i, j in itertools.combinations(range(part.q), 2)
            if interface_nonempty(part, i, j, sampler_count, seed)]


def normal_at(part: PartitionSpec, i: int, j: int, p, tol: float = 1e-8) -> np.ndarray:
    sph = interface_sphere(part, i, j, validate=False)
    p = np.asarray(p, dtype=float)
    scale = 1.0 + (p @ p if part.space.kind == "R" else 0.0)
    if abs(sph.equation(p)) > tol * scale:
        raise ContractError(f"point is not on the sphere of interface ({i},{j})")
    return sph.normal(p)


def weighted_mean_curvature(part: PartitionSpec, i: int, j: int, p) -> float:
    n = normal_at(part, i, j, p)
    if part.space.kind == "G":
        return float(-np.asarray(p, dtype=float) @ n)
    return (part.space.n - 1) * (part.cells[i].k - part.cells[j].k)


# ---------------------------------------------------------------------------
# triple points

@dataclass(frozen=True)
class TriplePointSample:
    p: np.ndarray
    indices: tuple
    normals: tuple       # n_ij, n_jk, n_ki
    conormals: tuple     # outward co-normals of Sigma_ij, Sigma_jk, Sigma_ki
    barII: tuple

    def pairs(self):
        i, j, k = self.indices
        return ((i, j), (j, k), (k, i))


def junction_data(part: PartitionSpec, i: int, j: int, k: int, p) -> TriplePointSample:
    p = np.asarray(p, dtype=float)
    nij = normal_at(part, i, j, p)
    njk = normal_at(part, j, k, p)
    nki = normal_at(part, k, i, p)
    r3 = np.sqrt(3.0)
    kij, kjk, kki = (curvature_diff(part, a, b) for a, b in ((i, j), (j, k), (k, i)))
    conormals = ((njk - nki) / r3, (nki - nij) / r3, (nij - njk) / r3)
    bar = ((kjk - kki) / r3, (kki - kij) / r3, (kij - kjk) / r3)
    return TriplePointSample(p, (i, j, k), (nij, njk, nki), conormals, bar)


def _triple_candidates(part, i, j, k, count, seed):
    if part.space.kind == "G":
        C, K = part.C, part.K
    else:
        C, K = sphere_lift(part)
    A = np.array([C[i] - C[j], C[j] - C[k]])
    b = -np.array([K[i] - K[j], K[j] - K[k]])
    gram = A @ A.T
    if abs(np.linalg.det(gram)) < 1e-14 * max(1.0, np.trace(gram)) ** 2:
        raise EmptyJunctionError(f"interfaces of ({i},{j},{k}) are parallel")
    xp = A.T @ np.linalg.solve(gram, b)
    E = null_space(A)
    if part.space.kind == "G":
        if E.shape[1] == 0:
            return xp[None]
        Z = normal_samples(count, E.shape[1], seed)
        return xp + 2.0 * Z @ E.T
    rho2 = 1.0 - xp @ xp
    if rho2 <= 1e-14:
        raise EmptyJunctionError(f"junction ({i},{j},{k}) misses the sphere")
    if E.shape[1] == 1:
        W = np.array([[1.0], [-1.0]])
    else:
        W = normal_samples(count, E.shape[1], seed)
        W /= np.linalg.norm(W, axis=1, keepdims=True)
    return _native_from_lift(part.space, xp + np.sqrt(rho2) * W @ E.T)


def triple_points(part: PartitionSpec, i: int, j: int, k: int, count: int = 64, seed=0,
                  radius: Optional[float] = None) -> np.ndarray:
    """Points of Sigma_ijk (the open junction), at most ``count``."""
    if len({i, j, k}) != 3:
        raise ContractError("triple junction needs three distinct cells")
    # oversample: only part of the junction circle lies in the open junction
    P = _triple_candidates(part, i, j, k, max(16 * count, 256), seed)
    if len(P) == 0:
        return P
    P = P[_region_mask(part.space, P, radius)]
    if len(P) == 0:
        return P
    if part.space.kind == "G":
        s = scores(part, P)
    else:
        C, K = sphere_lift(part)
        from .mobius import stereo_H, stereo_R
        L = {"S": lambda X: X, "R": stereo_R, "H": stereo_H}[part.space.kind](P)
        s = L @ C.T + K
    others = np.delete(s, [i, j, k], axis=1)
    if others.shape[1]:
        top = s[:, [i, j, k]].max(axis=1)
        P = P[others.min(axis=1) - top > MEMBER_TOL]
    return P[:count]


def triple_point_samples(part: PartitionSpec, i: int, j: int, k: int, count: int = 16,
                         seed=0) -> list:
    P = triple_points(part, i, j, k, count, seed)
    if len(P) == 0:
        raise EmptyJunctionError(f"junction ({i},{j},{k}) is empty")
    return [junction_data(part, i, j, k, p) for p in P]


def nonempty_triples(part: PartitionSpec, pairs=None, count: int = 64, seed=0):
    """Triples (i<j<k) whose junction has sampled points."""
    if pairs is None:
        pairs = nonempty_pairs(part, seed=seed)
    pairset = set(pairs)
    out = []
    for i, j, k in itertools.combinations(range(part.q), 3):
        if {(i, j), (j, k), (i, k)} <= pairset:
            try:
                if len(triple_points(part, i, j, k, count, seed)):
                    out.append((i, j, k))
            except EmptyJunctionError:
                pass
    return out


# ---------------------------------------------------------------------------
# volumes

@dataclass(frozen=True)
class VolumeEstimate:
    values: np.ndarray
    stderr: np.ndarray
    unbounded: np.ndarray
    measure: str

    def to_json(self) -> dict:
        return {"values": self.values.tolist(), "stderr": self.stderr.tolist(),
                "unbounded": self.unbounded.tolist(), "measure": self.measure}


def _unbounded_cells(part: PartitionSpec, seed) -> np.ndarray:
    """Cells reaching infinity: R -> contain the north pole in the lift; H -> meet the equator."""
    q = part.q
    out = np.zeros(q, dtype=bool)
    if part.space.kind == "S":
        return out
    if part.space.kind == "G":
        return np.ones(q, dtype=bool)
    C, K = sphere_lift(part)
    if part.space.kind == "R":
        N = np.zeros(part.space.dim + 1)
        N[-1] = 1.0
        s = C @ N + K
        out[np.isclose(s, s.min(), atol=1e-12, rtol=0)] = True
        return out
    # H: sample the equator of the lift
    Z = normal_samples(4096, part.space.n + 1, seed)
    Z[:, -1] = 0.0
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    out[np.unique(np.argmin(Z @ C.T + K, axis=1))] = True
    return out


def _ball_sample_R(n, count, radius, rng):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.random(count)[:, None] ** (1.0 / n)


def _ball_sample_H(n, count, radius, rng):
    # rejection from a uniform radius law against the sinh^{n-1} density
    out = []
    need = count
    cap = np.sinh(radius) ** (n - 1)
    while need > 0:
        r = radius * rng.random(2 * need)
        acc = rng.random(2 * need) * cap <= np.sinh(r) ** (n - 1)
        r = r[acc][:need]
        d = rng.standard_normal((len(r), n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out.append(np.hstack([d * np.sinh(r)[:, None], np.cosh(r)[:, None]]))
        need -= len(r)
    return np.vstack(out)


def _ball_volume(kind, n, radius):
    from scipy.integrate import quad
    from scipy.special import gamma

    area = 2 * np.pi ** (n / 2) / gamma(n / 2)
    if kind == "R":
        return area * radius ** n / n
    return area * quad(lambda r: np.sinh(r) ** (n - 1), 0, radius)[0]


def estimate_volumes(part: PartitionSpec, sample_count: int = 10 ** 5, seed=0,
                     radius: float = 8.0) -> VolumeEstimate:
    """Monte Carlo cell measures.

    S: round measure (total |S^n|); G: Gaussian probability; R, H: measure
    inside the truncation ball of the given geodesic radius.
    """
    if sample_count < 10 ** 4:
        raise ContractError("sample_count must be at least 1e4")
    rng = np.random.default_rng(seed)
    n, kind = part.space.n, part.space.kind
    from scipy.special import gamma

    if kind == "S":
        P = rng.standard_normal((sample_count, n + 1))
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        total, measure = 2 * np.pi ** ((n + 1) / 2) / gamma((n + 1) / 2), "round"
    elif kind == "G":
        P = rng.standard_normal((sample_count, n))
        total, measure = 1.0, "gaussian"
    elif kind == "R":
        P = _ball_sample_R(n, sample_count, radius, rng)
        total, measure = _ball_volume("R", n, radius), f"ball(r={radius:g})"
    else:
        P = _ball_sample_H(n, sample_count, radius, rng)
        total, measure = _ball_volume("H", n, radius), f"ball(r={radius:g})"
    lab = np.argmin(scores(part, P), axis=1)
    frac = np.bincount(lab, minlength=part.q) / sample_count
    se = np.sqrt(frac * (1 - frac) / sample_count)
    return VolumeEstimate(total * frac, total * se, _unbounded_cells(part, seed), measure)
