"""Stereographic projections, parameter transforms and Mobius transport.

``pi_R(x) = (2x, |x|^2 - 1) / (|x|^2 + 1)`` sends R^n to S^n minus the north
pole N = e_{n+1}; ``pi_H(y) = (ybar, 1) / y0`` sends H^n onto the open northern
hemisphere.  A cell with S-parameters (c, k) has R-score coefficients
``(a, b, d) = (k + c0, cbar, k - c0)``, i.e. score ``a|x|^2 + 2<b,x> + d``;
StereoAffine moves act on that triple exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ContractError, DegeneracyError, MalformedPartitionError
from .geometry import Space
from .partitions import (MEMBER_TOL, PartitionSpec, cells_of, interface_sphere,
                         make_partition, nonempty_pairs, normal_samples)


# ---------------------------------------------------------------------------
# projections

def stereo_R(x):
    x = np.asarray(x, dtype=float)
    r2 = np.einsum("...i,...i->...", x, x)[..., None]
    return np.concatenate([2 * x, r2 - 1], axis=-1) / (r2 + 1)


def stereo_R_inv(p):
    p = np.asarray(p, dtype=float)
    den = 1.0 - p[..., -1:]
    if np.any(np.abs(den) <= 1e-12):
        raise ContractError("inverse stereographic projection at the north pole")
    return p[..., :-1] / den


def stereo_H(y):
    y = np.asarray(y, dtype=float)
    y0 = y[..., -1:]
    return np.concatenate([y[..., :-1], np.ones_like(y0)], axis=-1) / y0


def stereo_H_inv(p):
    p = np.asarray(p, dtype=float)
    pN = p[..., -1:]
    if np.any(pN <= 1e-12):
        raise ContractError("inverse hyperbolic projection needs the open northern hemisphere")
    return np.concatenate([p[..., :-1], np.ones_like(pN)], axis=-1) / pN


# ---------------------------------------------------------------------------
# parameter transforms (vectorized over leading axes of c)

def params_H_from_S(c, k):
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    cH = np.concatenate([c[..., :-1], -k[..., None]], axis=-1)
    return cH, -c[..., -1]


def params_S_from_H(c, k):
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    cS = np.concatenate([c[..., :-1], -k[..., None]], axis=-1)
    return cS, -c[..., -1]


def params_R_from_S(c, k):
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    return c[..., :-1].copy(), k + c[..., -1], k.copy()


def params_S_from_R(cR, kR, kS):
    cR = np.asarray(cR, dtype=float)
    kR = np.asarray(kR, dtype=float)
    kS = np.asarray(kS, dtype=float)
    return np.concatenate([cR, (kR - kS)[..., None]], axis=-1), kS.copy()


def quadratic_triple(c, k):
    """R-score coefficients (a, b, d) of S-parameters."""
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    return k + c[..., -1], c[..., :-1].copy(), k - c[..., -1]


def params_from_triple(a, b, d):
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    c = np.concatenate([b, (0.5 * (a - d))[..., None]], axis=-1)
    return c, 0.5 * (a + d)


# ---------------------------------------------------------------------------
# Mobius maps

@dataclass(frozen=True)
class Rotate:
    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ContractError("rotation must be a square matrix")
        if np.abs(R.T @ R - np.eye(len(R))).max() > 1e-12:
            raise ContractError("rotation matrix is not orthogonal to 1e-12")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    def to_json(self):
        return {"rotate": self.R.tolist()}


@dataclass(frozen=True)
class StereoAffine:
    t: np.ndarray
    s: float

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ContractError("translation must be a finite vector")
        if not (np.isfinite(self.s) and self.s > 0):
            raise ContractError("scale must be positive")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", float(self.s))

    def to_json(self):
        return {"stereoAffine": {"t": self.t.tolist(), "s": self.s}}


Move = Union[Rotate, StereoAffine]


@dataclass(frozen=True)
class MobiusMap:
    moves: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "moves", tuple(self.moves))

    def to_json(self) -> dict:
        return {"moves": [m.to_json() for m in self.moves]}

    @classmethod
    def from_json(cls, data: dict) -> "MobiusMap":
        moves = []
        for i, m in enumerate(data.get("moves", [])):
            if "rotate" in m:
                moves.append(Rotate(m["rotate"]))
            elif "stereoAffine" in m:
                moves.append(StereoAffine(m["stereoAffine"]["t"], m["stereoAffine"]["s"]))
            else:
                raise ContractError(f"moves[{i}]: unknown primitive {sorted(m)}")
        return cls(tuple(moves))

    def then(self, other: "MobiusMap") -> "MobiusMap":
        return MobiusMap(self.moves + other.moves)


def _check_dim(move, d):
    size = move.R.shape[0] if isinstance(move, Rotate) else move.t.shape[0] + 1
    if size != d:
        raise ContractError(f"move acts on R^{size}, points live in R^{d}")


def apply_point(mmap: MobiusMap, P):
    """Image of sphere points under the map (north pole fixed by StereoAffine)."""
    P = np.array(P, dtype=float)
    for mv in mmap.moves:
        _check_dim(mv, P.shape[-1])
        if isinstance(mv, Rotate):
            P = P @ mv.R.T
            continue
        north = P[..., -1] > 1 - 1e-15
        Q = stereo_R(mv.s * stereo_R_inv(np.where(north[..., None], -P, P)) + mv.t)
        P = np.where(north[..., None], P, Q)
    return P


def _transport_params(mmap: MobiusMap, C, K):
    C = np.array(C, dtype=float)
    K = np.array(K, dtype=float)
    for mv in mmap.moves:
        _check_dim(mv, C.shape[-1])
        if isinstance(mv, Rotate):
            C = C @ mv.R.T
            continue
        s, t = mv.s, mv.t
        a, b, d = quadratic_triple(C, K)
        a2 = a / s ** 2
        b2 = b / s - np.outer(a, t) / s ** 2
        d2 = a * (t @ t) / s ** 2 - 2 * (b @ t) / s + d
        C, K = params_from_triple(s * a2, s * b2, s * d2)
    return C, K


def mobius_apply(mmap: MobiusMap, part: PartitionSpec, tol: float = 1e-8) -> PartitionSpec:
    if part.space.kind != "S":
        raise ContractError("Mobius maps act on S^n partitions")
    C, K = _transport_params(mmap, part.C, part.K)
    out = make_partition(part.space, C, K)
    for i in range(out.q):
        for j in range(i + 1, out.q):
            before = interface_sphere(part, i, j, validate=False).consistency_residual()
            after = interface_sphere(out, i, j, validate=False).consistency_residual()
            if after > tol + before:
                raise DegeneracyError(f"transported interface ({i},{j}) residual {after:.3e}")
    return out


def random_rotation(d: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    # re-orthogonalize to push the defect to roundoff
    U, _, Vt = np.linalg.svd(Q)
    return U @ Vt


def random_mobius(n: int, rng, s_range=(0.5, 2.0), t_max: float = 0.7) -> MobiusMap:
    """Rotate, StereoAffine, Rotate with moderate parameters."""
    t = rng.standard_normal(n)
    t *= t_max * rng.random() / np.linalg.norm(t)
    s = float(np.exp(rng.uniform(np.log(s_range[0]), np.log(s_range[1]))))
    return MobiusMap((Rotate(random_rotation(n + 1, rng)), StereoAffine(t, s),
                      Rotate(random_rotation(n + 1, rng))))


# ---------------------------------------------------------------------------
# pull-back / push-forward

def _hemisphere_samples(n, count, seed, north=True):
    Z = normal_samples(count, n + 1, seed)
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    Z[:, -1] = np.abs(Z[:, -1]) if north else -np.abs(Z[:, -1])
    return Z


def retained_cells_H(part: PartitionSpec, count: int = 1 << 15, seed=0) -> list:
    """Cells of an S-partition meeting the open northern hemisphere (sampled)."""
    P = _hemisphere_samples(part.space.n, count, seed)
    P = P[P[:, -1] > 1e-9]
    lab = cells_of(part, P, MEMBER_TOL)
    return sorted(int(i) for i in np.unique(lab[lab >= 0]))


def pullback_partition(part: PartitionSpec, target: str, count: int = 1 << 15, seed=0):
    """Returns (partition on target, index map into the S-cells)."""
    if part.space.kind != "S":
        raise ContractError("pull-back starts from an S^n partition")
    space = Space(target, part.space.n)
    if target == "R":
        cR, kR, kS = params_R_from_S(part.C, part.K)
        return make_partition(space, cR, kR, kS), list(range(part.q))
    if target != "H":
        raise ContractError(f"unsupported pull-back target {target!r}")
    keep = retained_cells_H(part, count, seed)
    if len(keep) < 2:
        raise MalformedPartitionError(f"pull-back to H^n retains {len(keep)} cell(s)")
    cH, kH = params_H_from_S(part.C[keep], part.K[keep])
    return make_partition(space, cH, kH), keep


def pushforward_cluster_H_to_S(part: PartitionSpec, count: int = 1 << 14, seed=0) -> PartitionSpec:
    """Cluster on H^n (last cell = exterior) to S^n parameters."""
    if part.space.kind != "H":
        raise ContractError("push-forward starts from an H^n partition")
    q = part.q
    pairs = [p for p in nonempty_pairs(part, seed=seed) if q - 1 in p]
    if not pairs:
        raise ContractError("no interface with the exterior cell")
    for i, _ in pairs:
        if abs(part.cells[i].k - part.cells[q - 1].k) <= 1.0:
            raise ContractError(f"interface ({i},{q - 1}) has |k| <= 1: not a cluster")
    cS, kS = params_S_from_H(part.C, part.K)
    out = make_partition(Space("S", part.space.n), cS, kS)
    P = _hemisphere_samples(part.space.n, count, seed, north=False)
    s = P @ out.C.T + out.K
    if np.any(np.argmin(s, axis=1) != q - 1) or np.any(
            np.delete(s, q - 1, axis=1).min(axis=1) < s[:, q - 1]):
        raise ContractError("exterior cell does not contain the southern hemisphere")
    return out


def partition_digest(part: PartitionSpec) -> str:
    blob = json.dumps(part.to_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TransformReport:
    source: str
    target: str
    residuals: dict

    def to_json(self):
        return {"source": self.source, "target": self.target,
                "residuals": {f"{i},{j}": r for (i, j), r in sorted(self.residuals.items())}}


def transform_report(src: PartitionSpec, dst: PartitionSpec) -> TransformReport:
    res = {}
    for i in range(dst.q):
        for j in range(i + 1, dst.q):
            res[(i, j)] = float(interface_sphere(dst, i, j, validate=False).consistency_residual())
    return TransformReport(partition_digest(src), partition_digest(dst), res)
