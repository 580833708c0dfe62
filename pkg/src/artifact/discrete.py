"""Discrete interface complexes, the index form and mesh-scale inequalities.

One-dimensional complexes (n = 2 models and the Gaussian plane) use a
cell-centred finite-volume scheme on exact arc-length parametrizations of the
interfaces.  Cell m of an interface of length L with N cells sits at
``s_a + (m + 1/2) h``.  Fluxes live on faces; the face at a triple point is
evaluated with second-order one-sided stencils through the first three cell
centres, which is what makes ``delta1_vol(L_V u)`` vanish to roundoff.

Two-dimensional meshes are icosahedral subdivisions of closed interfaces with
cotangent stiffness and barycentric lumped areas.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import (ConstraintViolation, ContractError, EmptyJunctionError, InfeasibleError,
                     MalformedPartitionError, MeshError)
from .flatness import PotentialSpec, potential_ambient_grad, potential_eval
from .geometry import (GeneralizedSphere, Space, fd_jet, geodesic_curve, geodesic_param, inner,
                       on_space_residual, tangent_frames, weighted_laplacian)
from .partitions import (MEMBER_TOL, PartitionSpec, _native_from_lift, _region_mask,
                         _triple_candidates, curvature_diff, interface_membership_gap,
                         interface_sphere, nonempty_pairs, scores, sphere_lift)
from .verification import VERIFY_FD, ricV_tensor

GAUSSIAN_RADIUS = 8.0
KIRCHHOFF_TOL = 1e-10
MAX_DENSE = 4000
Q0_MODES = ("LJacForm", "GradientForm", "ConjugatedForm")
MARGIN_MODES = ("ImageOfLV", "VolumeKernel")


def end_stencil(h: float):
    """Weights (value, derivative) at an end from cells at distances h/2, 3h/2, 5h/2."""
    r = np.array([0.5, 1.5, 2.5])
    A = np.vander(r, 3, increasing=True).T
    ex = np.linalg.solve(A, [1.0, 0.0, 0.0])
    dv = np.linalg.solve(A, [0.0, 1.0, 0.0]) / h
    return ex, dv


def _weight(space: Space, P):
    P = np.asarray(P, dtype=float)
    if space.kind == "G":
        return np.exp(-0.5 * np.einsum("...i,...i->...", P, P))
    return np.ones(P.shape[:-1])


# ---------------------------------------------------------------------------
# 1D complexes

@dataclass(eq=False)
class InterfaceMesh1D:
    """Finite-volume mesh of one interface arc (or closed loop)."""

    pair: tuple
    sphere: GeneralizedSphere
    anchor: np.ndarray
    direction: np.ndarray
    faces: np.ndarray            # N+1 increasing arc-length positions
    start: tuple                 # ("junction", id), ("free", None) or ("loop", None)
    end: tuple
    offset: int = 0
    points: np.ndarray = field(init=False)
    tangents: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    face_points: np.ndarray = field(init=False)
    face_tangents: np.ndarray = field(init=False)
    face_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if np.any(np.diff(self.faces) <= 0):
            raise MeshError("vertices must be strictly ordered")
        if self.N < 3:
            raise MeshError("an interface mesh needs at least three cells")
        sp_ = self.sphere.space
        self.points, self.tangents = geodesic_curve(self.sphere, self.anchor, self.direction, self.centers)
        self.face_points, self.face_tangents = geodesic_curve(self.sphere, self.anchor, self.direction,
                                                              self.faces)
        self.weights = _weight(sp_, self.points)
        self.face_weights = _weight(sp_, self.face_points)

    @property
    def N(self) -> int:
        return len(self.faces) - 1

    @property
    def h(self) -> float:
        return float(self.faces[1] - self.faces[0])

    @property
    def length(self) -> float:
        return float(self.faces[-1] - self.faces[0])

    @property
    def centers(self):
        return 0.5 * (self.faces[1:] + self.faces[:-1])

    @property
    def periodic(self) -> bool:
        return self.start[0] == "loop"

    @property
    def mass(self):
        return self.h * self.weights

    def end_cells(self, side: str):
        """Global indices of the three cells nearest an end, ordered inward."""
        if side == "start":
            return self.offset + np.arange(3)
        return self.offset + self.N - 1 - np.arange(3)

    def end_point(self, side: str):
        return self.face_points[0 if side == "start" else -1]

    def outward(self, side: str):
        """Outward unit co-normal at an end."""
        return -self.face_tangents[0] if side == "start" else self.face_tangents[-1]

    def to_json(self) -> dict:
        return {"pair": list(self.pair), "cells": self.N, "length": self.length,
                "start": list(self.start), "end": list(self.end)}


@dataclass(frozen=True)
class JunctionEnd:
    edge: int
    side: str
    sign: float
    barII: float


@dataclass(eq=False)
class Junction:
    point: np.ndarray
    cells: tuple                 # sorted (a, b, c)
    ends: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"point": self.point.tolist(), "cells": list(self.cells),
                "ends": [{"edge": e.edge, "side": e.side, "sign": e.sign, "barII": e.barII}
                         for e in self.ends]}


@dataclass(eq=False)
class PartitionComplex:
    part: PartitionSpec
    edges: list
    junctions: list
    radius: float

    @property
    def space(self) -> Space:
        return self.part.space

    @property
    def size(self) -> int:
        return sum(e.N for e in self.edges)

    @property
    def mass(self):
        return np.concatenate([e.mass for e in self.edges])

    @property
    def points(self):
        return np.concatenate([e.points for e in self.edges])

    @property
    def weight_model(self) -> str:
        return "gaussian" if self.space.kind == "G" else "uniform"

    def edge_slices(self):
        return [slice(e.offset, e.offset + e.N) for e in self.edges]

    def to_json(self) -> dict:
        return {"space": self.space.to_json(), "radius": self.radius, "weight": self.weight_model,
                "edges": [e.to_json() for e in self.edges],
                "junctions": [j.to_json() for j in self.junctions]}


def _base_point(part: PartitionSpec, i: int, j: int, sph: GeneralizedSphere):
    """A point of S_ij nearest the origin (R, G) or the apex (H), and a unit tangent there."""
    space = part.space
    if space.kind == "G":
        p0 = -sph.k * sph.c / (sph.c @ sph.c)
    else:
        C, K = sphere_lift(part)
        cl, kl = C[i] - C[j], K[i] - K[j]
        c2 = cl @ cl
        r = np.sqrt(max(1.0 - kl * kl / c2, 0.0))
        e = np.zeros(len(cl))
        e[-1] = 1.0
        w = e - (e @ cl) / c2 * cl
        if np.linalg.norm(w) < 1e-12:
            w = sla.null_space(cl[None])[:, 0]
        w = w / np.linalg.norm(w)
        sgn = -1.0 if space.kind == "R" else 1.0
        lifted = -kl * cl / c2 + sgn * r * w
        native = _native_from_lift(space, lifted[None])
        if len(native) == 0:
            raise MalformedPartitionError(f"interface ({i},{j}) misses the model space")
        p0 = native[0]
    u = tangent_frames(space, p0[None], sph.normal(p0)[None])[0][:, 0]
    return p0, u


def _excess(space: Space, P, radius):
    """Positive outside the truncation region."""
    P = np.asarray(P, dtype=float)
    if space.kind == "S":
        return -np.ones(P.shape[:-1])
    if space.kind == "H":
        return np.arccosh(np.maximum(P[..., -1], 1.0)) - radius
    return np.linalg.norm(P, axis=-1) - radius


def _curve_excess(sph, p0, u, radius):
    return lambda s: float(_excess(sph.space, geodesic_curve(sph, p0, u, np.array([s]))[0][0], radius))


def _open_range(sph, p0, u, radius):
    g = _curve_excess(sph, p0, u, radius)
    if g(0.0) >= 0:
        return None
    out = []
    for sgn in (1.0, -1.0):
        hi = 1.0
        while g(sgn * hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise MeshError("interface does not leave the truncation region")
        out.append(sgn * brentq(lambda s: g(sgn * s), 0.0, hi, xtol=1e-14))
    return out[1], out[0]


def _closed_crossings(sph, p0, u, period, radius):
    if sph.space.kind == "S":
        return []
    s = np.linspace(0.0, period, 2049)
    ex = _excess(sph.space, geodesic_curve(sph, p0, u, s)[0], radius)
    g = _curve_excess(sph, p0, u, radius)
    return [brentq(g, s[m], s[m + 1], xtol=1e-14) for m in range(len(s) - 1)
            if np.sign(ex[m]) != np.sign(ex[m + 1]) and ex[m] != 0]


def _enumerate_junctions(part: PartitionSpec, pairs, radius, seed):
    pairset = set(pairs)
    found = []
    for a, b, c in itertools.combinations(range(part.q), 3):
        present = len({(a, b), (b, c), (a, c)} & pairset)
        # two adjacent arcs suffice to look for a degenerate (quadruple) meeting point
        if present < 2:
            continue
        try:
            P = _triple_candidates(part, a, b, c, 8, seed)
        except EmptyJunctionError:
            continue
        if len(P) == 0:
            continue
        P = P[_region_mask(part.space, P, radius if part.space.kind != "S" else None)]
        if len(P) == 0:
            continue
        if part.space.kind == "G":
            s = scores(part, P)
        else:
            s = np.stack([scores(part, p[None])[0] for p in P])
        others = np.delete(s, [a, b, c], axis=1)
        top = s[:, [a, b, c]].mean(axis=1)
        for m, p in enumerate(P):
            gap = others[m].min() - top[m] if others.shape[1] else np.inf
            if abs(gap) <= MEMBER_TOL * max(1.0, abs(top[m])):
                raise MalformedPartitionError(f"quadruple point encountered near {np.round(p, 6).tolist()}")
            if gap > 0 and present == 3:
                found.append(Junction(p, (a, b, c)))
    return found


def build_complex_1d(part: PartitionSpec, resolution: float = 25.0, radius: float = GAUSSIAN_RADIUS,
                     cells_per_edge: Optional[int] = None, seed=0) -> PartitionComplex:
    """Finite-volume complex of a partition of a 2-dimensional model space.

    ``resolution`` is cells per unit length (at least 8 per arc); ``cells_per_edge``
    overrides it with a fixed count.  R and G interfaces are truncated at
    ``|x| = radius``, H interfaces at geodesic distance ``radius`` from the apex.
    """
    space = part.space
    if space.n != 2:
        raise ContractError("1D complexes need a 2-dimensional model space")
    if resolution <= 0 or (cells_per_edge is not None and cells_per_edge < 3):
        raise ContractError("resolution must be positive and cells_per_edge >= 3")
    pairs = nonempty_pairs(part, seed=seed)
    junctions = _enumerate_junctions(part, pairs, radius, seed)
    edges = []
    r3 = np.sqrt(3.0)
    for i, j in pairs:
        sph = interface_sphere(part, i, j)
        p0, u = _base_point(part, i, j, sph)
        kap = sph.kappa
        closed = kap > 1e-14
        period = 2 * np.pi / np.sqrt(kap) if closed else None
        bps = []                      # (param, junction id)
        for jid, J in enumerate(junctions):
            if i not in J.cells or j not in J.cells:
                continue
            s = float(geodesic_param(sph, p0, u, J.point))
            if closed:
                s %= period
            q = geodesic_curve(sph, p0, u, np.array([s]))[0][0]
            if np.linalg.norm(q - J.point) > 1e-7 * (1 + np.linalg.norm(J.point)):
                raise MalformedPartitionError(f"junction {J.cells} does not lie on interface ({i},{j})")
            bps.append((s, jid))
        if closed:
            cuts = [(s, None) for s in _closed_crossings(sph, p0, u, period, radius)]
            marks = sorted(bps + cuts, key=lambda t: t[0])
            if not marks:
                intervals = [((0.0, None), (period, None), True)]
            else:
                intervals = [(marks[m], marks[m + 1], False) for m in range(len(marks) - 1)]
                intervals.append((marks[-1], (marks[0][0] + period, marks[0][1]), False))
        else:
            rng_ = _open_range(sph, p0, u, radius)
            if rng_ is None:
                continue
            inside = sorted(b for b in bps if rng_[0] < b[0] < rng_[1])
            marks = [(rng_[0], None)] + inside + [(rng_[1], None)]
            intervals = [(marks[m], marks[m + 1], False) for m in range(len(marks) - 1)]
        for (sa, ja), (sb, jb), loop in intervals:
            if sb - sa < 1e-9:
                continue
            mid = geodesic_curve(sph, p0, u, np.array([0.5 * (sa + sb)]))[0]
            if _excess(space, mid, radius)[0] > 0 or interface_membership_gap(part, i, j, mid)[0] <= MEMBER_TOL:
                continue
            N = cells_per_edge or max(8, int(np.ceil(resolution * (sb - sa))))
            tag = lambda jid: ("loop", None) if loop else (("free", None) if jid is None else ("junction", jid))
            edges.append(InterfaceMesh1D((i, j), sph, p0, u, np.linspace(sa, sb, N + 1), tag(ja), tag(jb)))
    offset = 0
    for eid, e in enumerate(edges):
        e.offset = offset
        offset += e.N
        for side, t in (("start", e.start), ("end", e.end)):
            if t[0] != "junction":
                continue
            J = junctions[t[1]]
            a, b, c = J.cells
            l = next(x for x in J.cells if x not in e.pair)
            sign = -1.0 if e.pair == (a, c) else 1.0
            i, j = e.pair
            bar = (curvature_diff(part, i, l) + curvature_diff(part, j, l)) / r3
            J.ends.append(JunctionEnd(eid, side, sign, float(bar)))
    used = []
    remap = {}
    for jid, J in enumerate(junctions):
        if not J.ends:
            continue
        if len(J.ends) != 3 or len({edges[e.edge].pair for e in J.ends}) != 3:
            raise MalformedPartitionError(f"unresolved junction {J.cells}: {len(J.ends)} incident arcs")
        remap[jid] = len(used)
        used.append(J)
    for e in edges:
        if e.start[0] == "junction":
            e.start = ("junction", remap[e.start[1]])
        if e.end[0] == "junction":
            e.end = ("junction", remap[e.end[1]])
    if not edges:
        raise MalformedPartitionError("partition has no interface inside the truncation region")
    return PartitionComplex(part, edges, used, radius)


# ---------------------------------------------------------------------------
# operators

def _as_potential(cx: PartitionComplex, V):
    if V is None:
        return lambda P: np.ones(np.asarray(P).shape[:-1]), lambda P: np.zeros_like(np.asarray(P))
    if isinstance(V, PotentialSpec):
        if V.space != cx.space:
            raise ContractError("potential lives on a different space")
        return (lambda P: potential_eval(V, P)), (lambda P: potential_ambient_grad(V, P))
    raise ContractError("V must be a PotentialSpec or None")


@dataclass(eq=False)
class OperatorSet:
    """Assembled operators; all field vectors are cell values in edge order."""

    mass: np.ndarray             # diagonal of the weighted mass matrix
    V: np.ndarray                # potential at cell centres
    stiffness: sp.csr_matrix
    laplacian: sp.csr_matrix     # weighted Laplacian Delta_mu
    LJac: sp.csr_matrix
    LV: sp.csr_matrix
    jacobi: np.ndarray           # Ric(n,n) + |II|^2 per cell
    constraints: np.ndarray      # rows on [u, c_p]: Kirchhoff, conformal BC, Kirchhoff of L_V u
    kirchhoff_f: np.ndarray      # Kirchhoff rows on fields f
    volume: np.ndarray           # (q, size): delta1_vol = volume @ f
    forms: dict                  # mode -> matrix with Q0(f) = f^T A f
    _null: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.mass)

    def admissible_basis(self) -> np.ndarray:
        """Basis of admissible [u, c_p] (columns), by pivoted elimination."""
        if self._null is None:
            self._null = _null_basis(self.constraints)
        return self._null


def _null_basis(C, tol=1e-11):
    C = np.atleast_2d(C)
    n = C.shape[1]
    if C.shape[0] == 0:
        return np.eye(n)
    Q, R, piv = sla.qr(C, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > tol * max(d[0], 1.0))) if len(d) else 0
    Z = np.zeros((n, n - r))
    if r:
        Z[piv[:r]] = -sla.solve_triangular(R[:r, :r], R[:r, r:])
    Z[piv[r:], np.arange(n - r)] = 1.0
    return Z


def _flux_rows(e: InterfaceMesh1D, Vf, dVf, ex, dv):
    """Face fluxes of w (V u' - u V') in the +s direction, (N+1, N)."""
    N, h = e.N, e.h
    w = e.face_weights
    G = np.zeros((N + 1, N))
    m = np.arange(1, N)
    G[m, m - 1] = w[m] * (-Vf[m] / h - 0.5 * dVf[m])
    G[m, m] = w[m] * (Vf[m] / h - 0.5 * dVf[m])
    if e.periodic:
        row = np.zeros(N)
        row[N - 1] = w[0] * (-Vf[0] / h - 0.5 * dVf[0])
        row[0] = w[0] * (Vf[0] / h - 0.5 * dVf[0])
        G[0] = G[N] = row
        return G
    if e.start[0] == "junction":
        G[0, :3] = w[0] * (Vf[0] * dv - dVf[0] * ex)
    if e.end[0] == "junction":
        G[N, N - 1 - np.arange(3)] = w[N] * (-Vf[N] * dv - dVf[N] * ex)
    return G


def assemble_operators(cx: PartitionComplex, V: Optional[PotentialSpec] = None,
                       jacobi_override: Optional[float] = None) -> OperatorSet:
    """Mass, stiffness, L_Jac, L_V, constraints and the three index-form matrices.

    ``jacobi_override`` replaces Ric(n,n) + |II|^2 by a constant (test toys).
    """
    Vfun, gradV = _as_potential(cx, V)
    n = cx.size
    sig = cx.space.signature
    mass = cx.mass
    if np.any(mass <= 0):
        raise ContractError("singular mass")
    Vc = np.concatenate([Vfun(e.points) for e in cx.edges])
    Vface = [Vfun(e.face_points) for e in cx.edges]
    if np.any(Vc <= 0) or any(np.any(v <= 0) for v in Vface):
        raise ContractError("V must be positive on all vertices")
    LVb, Lapb, Kb, Cb = [], [], [], []
    jac = np.empty(n)
    ljacV = np.empty(n)
    for e, Vf in zip(cx.edges, Vface):
        ex, dv = end_stencil(e.h)
        dVf = inner(gradV(e.face_points), e.face_tangents, sig)
        D = sp.diags([-np.ones(e.N), np.ones(e.N)], [0, 1], shape=(e.N, e.N + 1))
        inv_mu = sp.diags(1.0 / e.mass)
        LVb.append(inv_mu @ D @ sp.csr_matrix(_flux_rows(e, Vf, dVf, ex, dv)))
        ones = np.ones(e.N + 1)
        Lapb.append(inv_mu @ D @ sp.csr_matrix(_flux_rows(e, ones, 0 * ones, ex, dv)))
        Kb.append(_stiffness(e, ex))
        Cb.append(_conjugated_interior(e, Vfun, gradV, ex))
        sl = slice(e.offset, e.offset + e.N)
        jac[sl] = e.sphere.jacobi_potential() if jacobi_override is None else jacobi_override
        frames = e.tangents[:, :, None]
        jet = fd_jet(e.sphere, e.points, Vfun, VERIFY_FD, frames)
        ljacV[sl] = weighted_laplacian(e.sphere, e.points, jet) + jac[sl] * Vc[sl]
    LV = sp.block_diag(LVb, format="csr")
    Lap = sp.block_diag(Lapb, format="csr")
    K = sp.block_diag(Kb, format="csr")
    LJac = (Lap + sp.diags(jac)).tocsr()

    nj = len(cx.junctions)
    rows, kf = [], []
    bnd_bar = np.zeros((n, n))
    bnd_ljac = np.zeros((n, n))
    bnd_conj = np.zeros((n, n))
    for p, J in enumerate(cx.junctions):
        kir = np.zeros(n + nj)
        kirf = np.zeros(n)
        bcs = []
        for end in J.ends:
            e = cx.edges[end.edge]
            ex, dv = end_stencil(e.h)
            idx = e.end_cells(end.side)
            kir[idx] += end.sign * ex
            kirf[idx] += end.sign * ex
            dn = -dv                      # outward derivative from inward-ordered cells
            bc = np.zeros(n + nj)
            bc[idx] = end.sign * (dn - end.barII * ex)
            bc[n + p] = -1.0
            bcs.append(bc)
            wp = float(e.face_weights[0 if end.side == "start" else -1])
            pe = e.end_point(end.side)
            Vp = float(Vfun(pe[None])[0])
            dnV = float(inner(gradV(pe[None])[0], e.outward(end.side), sig))
            ix = np.ix_(idx, idx)
            bnd_bar[ix] += wp * end.barII * np.outer(ex, ex)
            bnd_ljac[ix] += wp * np.outer(dn - end.barII * ex, ex)
            bnd_conj[ix] += wp * (dnV / Vp - end.barII) * np.outer(ex, ex)
        rows += [kir] + bcs
        kf.append(kirf)
    # truncation ends carry the conjugation boundary term with barII = 0
    for e in cx.edges:
        for side, t in (("start", e.start), ("end", e.end)):
            if t[0] != "free":
                continue
            ex, _ = end_stencil(e.h)
            idx = e.end_cells(side)
            pe = e.end_point(side)
            dnV = float(inner(gradV(pe[None])[0], e.outward(side), sig))
            wp = float(e.face_weights[0 if side == "start" else -1])
            bnd_conj[np.ix_(idx, idx)] += wp * dnV / float(Vfun(pe[None])[0]) * np.outer(ex, ex)
    Kf = np.array(kf).reshape(nj, n)
    kirLV = Kf @ LV if nj else np.zeros((0, n))
    C = np.zeros((len(rows) + nj, n + nj))
    if rows:
        C[:len(rows)] = np.array(rows)
        C[len(rows):, :n] = kirLV.toarray() if sp.issparse(kirLV) else kirLV

    q = cx.part.q
    vol = np.zeros((q, n))
    for e in cx.edges:
        i, j = e.pair
        vol[i, e.offset:e.offset + e.N] += e.mass
        vol[j, e.offset:e.offset + e.N] -= e.mass

    M = sp.diags(mass)
    grad = (K - sp.diags(mass * jac) - sp.csr_matrix(bnd_bar)).tocsr()
    ljac = (-(M @ LJac) + sp.csr_matrix(bnd_ljac)).tocsr()
    conj = (sp.block_diag(Cb, format="csr") - sp.diags(mass * ljacV / Vc) + sp.csr_matrix(bnd_conj)).tocsr()
    forms = {"GradientForm": grad, "LJacForm": ljac, "ConjugatedForm": conj}
    return OperatorSet(mass, Vc, K, Lap, LJac, LV, jac, C, Kf, vol, forms)


def _stiffness(e: InterfaceMesh1D, ex):
    """sum over faces of w |f'|^2 (interior faces, loop face, junction half-cells)."""
    N, h, w = e.N, e.h, e.face_weights
    K = np.zeros((N, N))
    m = np.arange(1, N)
    a = w[m] / h
    K[m - 1, m - 1] += a
    K[m, m] += a
    K[m - 1, m] -= a
    K[m, m - 1] -= a
    if e.periodic:
        a = w[0] / h
        K[N - 1, N - 1] += a
        K[0, 0] += a
        K[0, N - 1] -= a
        K[N - 1, 0] -= a
        return sp.csr_matrix(K)
    for side, t, wf in (("start", e.start, w[0]), ("end", e.end, w[-1])):
        if t[0] != "junction":
            continue
        idx = np.arange(3) if side == "start" else N - 1 - np.arange(3)
        g = np.zeros(N)
        g[idx[0]] = 1.0
        g[idx] -= ex
        K += wf / (0.5 * h) * np.outer(g, g)
    return sp.csr_matrix(K)


def _conjugated_interior(e: InterfaceMesh1D, Vfun, gradV, ex):
    """sum over faces of w |f' - (V'/V) f|^2 h (half-cells at junction ends, free-end correction)."""
    N, h = e.N, e.h
    sig = e.sphere.sig
    r = np.zeros((N + 1, N))
    scale = np.zeros(N + 1)
    Vf = Vfun(e.face_points)
    lg = inner(gradV(e.face_points), e.face_tangents, sig) / Vf
    m = np.arange(1, N)
    r[m, m - 1] = -1.0 / h - 0.5 * lg[m]
    r[m, m] = 1.0 / h - 0.5 * lg[m]
    scale[m] = e.face_weights[m] * h
    if e.periodic:
        r[0, N - 1] = -1.0 / h - 0.5 * lg[0]
        r[0, 0] = 1.0 / h - 0.5 * lg[0]
        scale[0] = e.face_weights[0] * h
    else:
        for side, t in (("start", e.start), ("end", e.end)):
            if t[0] != "junction":
                continue
            sq = e.faces[0] + 0.25 * h if side == "start" else e.faces[-1] - 0.25 * h
            P, T = geodesic_curve(e.sphere, e.anchor, e.direction, np.array([sq]))
            lq = float(inner(gradV(P), T, sig)[0] / Vfun(P)[0])
            idx = np.arange(3) if side == "start" else N - 1 - np.arange(3)
            row = 0 if side == "start" else N
            # derivative along +s across the half cell, mean value at its midpoint
            sgn = 1.0 if side == "start" else -1.0
            r[row, idx[0]] += sgn / (0.5 * h) - 0.5 * lq
            r[row, idx] += -sgn * ex / (0.5 * h) - 0.5 * lq * ex
            scale[row] = float(_weight(e.sphere.space, P)[0]) * 0.5 * h
    A = r.T @ (scale[:, None] * r)
    if not e.periodic:
        # free ends: the stiffness omits the end half-cell, so only the difference
        # |f' - l f|^2 - |f'|^2 = l^2 f^2 - 2 l f f' of the omitted piece is added
        for side, t in (("start", e.start), ("end", e.end)):
            if t[0] != "free":
                continue
            sq = e.faces[0] + 0.25 * h if side == "start" else e.faces[-1] - 0.25 * h
            P, T = geodesic_curve(e.sphere, e.anchor, e.direction, np.array([sq]))
            lq = float(inner(gradV(P), T, sig)[0] / Vfun(P)[0])
            idx = np.arange(3) if side == "start" else N - 1 - np.arange(3)
            sgn = 1.0 if side == "start" else -1.0
            d = np.zeros(N)
            d[idx[0]] += sgn / (0.5 * h)
            d[idx] -= sgn * ex / (0.5 * h)
            mv = np.zeros(N)
            mv[idx[0]] += 0.5
            mv[idx] += 0.5 * ex
            wq = float(_weight(e.sphere.space, P)[0]) * 0.5 * h
            A += wq * (lq * lq * np.outer(mv, mv) - lq * (np.outer(mv, d) + np.outer(d, mv)))
    return sp.csr_matrix(A)


# ---------------------------------------------------------------------------
# index form, volume and margins

def kirchhoff_residual(ops: OperatorSet, f) -> float:
    f = np.asarray(f, dtype=float)
    if ops.kirchhoff_f.shape[0] == 0:
        return 0.0
    return float(np.abs(ops.kirchhoff_f @ f).max())


def project_kirchhoff(ops: OperatorSet, f):
    """Minimal-norm correction of f onto the Kirchhoff constraints."""
    f = np.asarray(f, dtype=float)
    A = ops.kirchhoff_f
    if A.shape[0] == 0:
        return f.copy()
    return f - A.T @ np.linalg.lstsq(A @ A.T, A @ f, rcond=None)[0]


def q0_eval(cx: PartitionComplex, ops: OperatorSet, f, mode: str = "GradientForm") -> float:
    """Quadrature value of the index form in the chosen formulation."""
    if mode not in Q0_MODES:
        raise ContractError(f"unknown Q0 mode {mode!r}")
    f = np.asarray(f, dtype=float)
    if f.shape != (ops.size,):
        raise ContractError(f"field has shape {f.shape}, expected ({ops.size},)")
    res = kirchhoff_residual(ops, f)
    if res > KIRCHHOFF_TOL * max(1.0, np.abs(f).max()):
        raise ConstraintViolation(f"Kirchhoff residual {res:.3e} exceeds {KIRCHHOFF_TOL:g}")
    return float(f @ (ops.forms[mode] @ f))


def delta1_vol(cx: PartitionComplex, f):
    """First variation of the cell volumes; components sum to zero."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(cx.part.q)
    for e in cx.edges:
        I = e.mass @ f[e.offset:e.offset + e.N]
        out[e.pair[0]] += I
        out[e.pair[1]] -= I
    return out


def random_admissible(ops: OperatorSet, count: int, seed=0):
    """Random admissible u (columns), normalized so that ||L_V u||_{1/V} = 1."""
    Z = ops.admissible_basis()
    rng = np.random.default_rng(seed)
    U = (Z @ rng.standard_normal((Z.shape[1], count)))[:ops.size]
    F = ops.LV @ U
    nrm = np.sqrt(np.einsum("m,mr->r", ops.mass / ops.V, F * F))
    return U / np.where(nrm > 0, nrm, 1.0)


def smooth_field(cx: PartitionComplex, seed=0, degree: int = 2):
    """Kirchhoff-compatible smooth field f_ij = g_i - g_j from random ambient g_i."""
    rng = np.random.default_rng(seed)
    d = cx.space.dim
    q = cx.part.q
    A = rng.standard_normal((q, d, d)) * 0.3
    B = rng.standard_normal((q, d))
    W = rng.standard_normal((q, d))
    c0 = rng.standard_normal(q)

    def g(i, P):
        val = c0[i] + P @ B[i] + np.sin(P @ W[i])
        if degree >= 2:
            val = val + np.einsum("mi,ij,mj->m", P, A[i], P) / (1 + np.einsum("mi,mi->m", P, P))
        return val

    return np.concatenate([g(e.pair[0], e.points) - g(e.pair[1], e.points) for e in cx.edges])


@dataclass(frozen=True)
class StabilityReport:
    mode: str
    margin: float
    dimension: int
    lowest: tuple
    cells: int

    def to_json(self) -> dict:
        return {"mode": self.mode, "margin": self.margin, "dimension": self.dimension,
                "lowest": list(self.lowest), "cells": self.cells}


def _orthonormal_range(B, w):
    """Columns spanning range(B), orthonormal in the diag(w) inner product."""
    sw = np.sqrt(w)
    U, S, _ = np.linalg.svd(sw[:, None] * B, full_matrices=False)
    if len(S) == 0 or S[0] == 0:
        return np.zeros((len(w), 0))
    keep = S > 1e-9 * S[0]
    return U[:, keep] / sw[:, None]


def stability_margin(cx: PartitionComplex, ops: OperatorSet, mode: str = "ImageOfLV",
                     lowest: int = 5) -> StabilityReport:
    """Minimum of Q0(f)/||f||^2 over the admissible test space."""
    if mode not in MARGIN_MODES:
        raise ContractError(f"unknown margin mode {mode!r}")
    if ops.size > 4 * MAX_DENSE:
        raise MeshError(f"{ops.size} DOFs exceed the dense-solve cap")
    if mode == "ImageOfLV":
        Z = ops.admissible_basis()[:ops.size]
        Y = _orthonormal_range(ops.LV @ Z, ops.mass / ops.V)
    else:
        C = np.vstack([ops.kirchhoff_f, ops.volume])
        Y = _orthonormal_range(_null_basis(C), ops.mass)
    if Y.shape[1] == 0:
        raise InfeasibleError("empty admissible space")
    Q = ops.forms["GradientForm"]
    H = Y.T @ (Q @ Y)
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    return StabilityReport(mode, float(ev[0]), Y.shape[1], tuple(float(x) for x in ev[:lowest]), ops.size)


# ---------------------------------------------------------------------------
# 2D meshes of closed interfaces

_PHI = (1 + np.sqrt(5.0)) / 2
_ICO_V = np.array([[-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
                   [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
                   [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1]], dtype=float)
_ICO_F = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                   [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                   [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                   [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])


def icosphere(level: int):
    """Unit-sphere vertices and outward-oriented triangles of a subdivided icosahedron."""
    if level < 0:
        raise ContractError("level must be nonnegative")
    X = _ICO_V / np.linalg.norm(_ICO_V, axis=1, keepdims=True)
    F = _ICO_F.copy()
    for _ in range(level):
        E = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(E, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = X[uniq[:, 0]] + X[uniq[:, 1]]
        X = np.vstack([X, mid / np.linalg.norm(mid, axis=1, keepdims=True)])
        m = len(F)
        a, b, c = (len(X) - len(uniq) + inv[k * m:(k + 1) * m] for k in range(3))
        F = np.vstack([np.stack([F[:, 0], a, c], 1), np.stack([F[:, 1], b, a], 1),
                       np.stack([F[:, 2], c, b], 1), np.stack([a, b, c], 1)])
    return X, F


@dataclass(eq=False)
class InterfaceMesh2D:
    sphere: GeneralizedSphere
    points: np.ndarray
    triangles: np.ndarray
    frames: np.ndarray
    areas: np.ndarray            # barycentric lumped vertex weights
    closed: bool = True

    @property
    def size(self) -> int:
        return len(self.points)

    def triangle_grams(self):
        P = self.points
        T = self.triangles
        E1 = P[T[:, 1]] - P[T[:, 0]]
        E2 = P[T[:, 2]] - P[T[:, 0]]
        sig = self.sphere.sig
        G = np.stack([np.stack([inner(E1, E1, sig), inner(E1, E2, sig)], -1),
                      np.stack([inner(E2, E1, sig), inner(E2, E2, sig)], -1)], -2)
        return E1, E2, G

    def stiffness(self) -> sp.csr_matrix:
        """Cotangent stiffness (positive semidefinite)."""
        P, T, sig = self.points, self.triangles, self.sphere.sig
        n = len(P)
        I, J, W = [], [], []
        for k in range(3):
            a, b, c = T[:, k], T[:, (k + 1) % 3], T[:, (k + 2) % 3]
            u, v = P[b] - P[a], P[c] - P[a]
            uu, vv, uv = inner(u, u, sig), inner(v, v, sig), inner(u, v, sig)
            cot = uv / np.sqrt(uu * vv - uv * uv)
            I += [b, c, b, c]
            J += [c, b, b, c]
            W += [-0.5 * cot, -0.5 * cot, 0.5 * cot, 0.5 * cot]
        return sp.csr_matrix((np.concatenate(W), (np.concatenate(I), np.concatenate(J))), shape=(n, n))


def _sphere_placement(sph: GeneralizedSphere):
    """(center, E, radius): the sphere is center + radius * E @ omega over unit omega."""
    kind = sph.space.kind
    c, k = sph.c, sph.k
    if kind == "S":
        c2 = c @ c
        E = sla.null_space(c[None])
        return -k * c / c2, E, np.sqrt(max(1 - k * k / c2, 0.0))
    if kind == "R":
        if abs(k) < 1e-14:
            raise MeshError("planes are open interfaces")
        return -c / k, np.eye(len(c)), 1.0 / abs(k)
    if kind == "H":
        cc = inner(c, c, "lorentzian")
        if cc >= 0:
            raise MeshError("horospheres and equidistants are open interfaces")
        et = c / np.sqrt(-cc)
        if et[-1] < 0:
            et = -et
        alpha = k / inner(c, et, "lorentzian")
        if alpha < 1:
            raise MeshError("sphere does not meet the hyperboloid")
        Jet = et.copy()
        Jet[-1] *= -1
        B = sla.null_space(Jet[None])
        JB = B.copy()
        JB[-1] *= -1
        L = np.linalg.cholesky(B.T @ JB)
        E = np.linalg.solve(L, B.T).T
        return alpha * et, E, np.sqrt(alpha * alpha - 1)
    raise MeshError("Gaussian interfaces are open")


def mesh_sphere(sphere: GeneralizedSphere, level: int) -> InterfaceMesh2D:
    """Icosahedral mesh of a closed 2-dimensional interface."""
    if sphere.space.n != 3:
        raise ContractError("mesh_sphere needs a 2-dimensional interface (n = 3)")
    center, E, r = _sphere_placement(sphere)
    X, F = icosphere(level)
    P = center + r * X @ E.T
    scale = 1.0 + (np.einsum("mi,mi->m", P, P) if sphere.space.kind == "R" else 0.0)
    res = max(float(np.max(np.abs(sphere.equation(P)) / scale)), float(on_space_residual(sphere.space, P).max()))
    if res > 1e-10:
        raise MeshError(f"mesh vertices leave the sphere (residual {res:.2e})")
    frames = tangent_frames(sphere.space, P, sphere.normal(P))
    mesh = InterfaceMesh2D(sphere, P, F, frames, np.zeros(len(P)))
    _, _, G = mesh.triangle_grams()
    tri_area = 0.5 * np.sqrt(np.linalg.det(G))
    mesh.areas = np.bincount(F.ravel(), np.repeat(tri_area / 3, 3), minlength=len(P))
    return mesh


def spectrum(mesh: InterfaceMesh2D, count: int = 10):
    """Lowest eigenvalues of -Delta on the mesh (dense generalized eigensolve)."""
    if not mesh.closed:
        raise MeshError("spectrum needs a closed mesh")
    if mesh.size > MAX_DENSE:
        raise MeshError(f"{mesh.size} vertices exceed the dense eigensolve cap of {MAX_DENSE}")
    L = mesh.stiffness().toarray()
    ev = sla.eigh(0.5 * (L + L.T), np.diag(mesh.areas), eigvals_only=True,
                  subset_by_index=[0, min(count, mesh.size) - 1])
    return ev


@dataclass(frozen=True)
class BLReport:
    min_gap: float
    mean_gap: float
    trials: int
    N: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.min_gap >= -self.tol

    def to_json(self) -> dict:
        return {"check": "brascamp_lieb", "max": -self.min_gap, "min_gap": self.min_gap,
                "mean": self.mean_gap, "samples": self.trials, "N": self.N, "tol": self.tol,
                "pass": self.passed}


def random_smooth_functions(dim: int, count: int, seed=0):
    """Random smooth ambient scalar functions (quadratic plus a trigonometric mode)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = rng.standard_normal()
        b = rng.standard_normal(dim)
        A = 0.5 * rng.standard_normal((dim, dim))
        w = rng.standard_normal(dim)
        ph = rng.uniform(0, 2 * np.pi)
        out.append(lambda P, a=a, b=b, A=A, w=w, ph=ph:
                   a + P @ b + np.einsum("...i,ij,...j->...", P, A, P) + np.sin(P @ w + ph))
    return out


def conjugate_laplacian_field(mesh: InterfaceMesh2D, Vv, uv):
    """f = V Delta_h u - u Delta_h V with the lumped cotangent Laplacian."""
    L = mesh.stiffness()
    lap = lambda x: -(L @ x) / mesh.areas
    return Vv * lap(uv) - uv * lap(Vv)


def bl_check(mesh: InterfaceMesh2D, V: PotentialSpec, N: Optional[float] = None, trials: int = 100,
             seed=0, tol: float = 0.01, fields=None) -> BLReport:
    """Discrete conjugated Brascamp-Lieb inequality for f = L_V u over random smooth u."""
    if not mesh.closed:
        raise MeshError("bl_check needs a closed mesh")
    sph = mesh.sphere
    N = float(sph.space.n - 1) if N is None else float(N)
    if N <= 1:
        raise ContractError("N must exceed 1")
    Vf = lambda X: potential_eval(V, X)
    P = mesh.points
    Vv = Vf(P)
    if np.any(Vv <= 0):
        raise ContractError("potential must be positive on the mesh")
    jet = fd_jet(sph, P, Vf, VERIFY_FD, mesh.frames)
    Mt = ricV_tensor(sph, P, jet, Vv)
    if np.linalg.eigvalsh(0.5 * (Mt + np.swapaxes(Mt, 1, 2))).min() <= 0:
        raise ContractError("V Ric^V is not positive definite on the mesh")
    # per-triangle coordinate matrices of V Ric^V in the edge basis
    T = mesh.triangles
    E1, E2, G = mesh.triangle_grams()
    area = 0.5 * np.sqrt(np.linalg.det(G))
    J = np.ones(P.shape[1])
    if sph.space.kind == "H":
        J[-1] = -1.0
    A = np.zeros((len(T), 2, 2))
    for k in range(3):
        Fv = mesh.frames[T[:, k]]
        c1 = np.einsum("mda,md->ma", Fv, J * E1)
        c2 = np.einsum("mda,md->ma", Fv, J * E2)
        Cm = np.stack([c1, c2], axis=1)
        A += np.einsum("mia,mab,mjb->mij", Cm, Mt[T[:, k]], Cm) / 3
    Ainv = np.linalg.inv(A)
    VT2 = (Vv[T] ** 2).mean(axis=1)
    fields = fields if fields is not None else random_smooth_functions(P.shape[1], trials, seed)
    gaps = []
    for u in fields:
        f = conjugate_laplacian_field(mesh, Vv, u(P))
        g = f / Vv
        d = np.stack([g[T[:, 1]] - g[T[:, 0]], g[T[:, 2]] - g[T[:, 0]]], axis=1)
        rhs = float(np.sum(area * VT2 * np.einsum("mi,mij,mj->m", d, Ainv, d)))
        lhs = float(N / (N - 1) * np.sum(mesh.areas * f * f / Vv))
        gaps.append((rhs - lhs) / rhs if rhs > 1e-300 else 0.0)
    gaps = np.array(gaps)
    return BLReport(float(gaps.min()), float(gaps.mean()), len(gaps), N, tol)
