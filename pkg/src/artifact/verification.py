"""Pointwise and integrated numerical checks of the partition identities.

Every check returns a :class:`VerificationReport`; ``passed`` is exactly
``max <= tol``.  Interface samples are restricted to a moderate region
(|x| <= 4 on R^n, geodesic radius 2.5 on H^n) so that FD round-off stays well
below the 1e-6 tolerances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, EmptyJunctionError, SamplingError
from .flatness import (FlatnessCertificate, PotentialSpec, expected_LJac_value,
                       expected_RicV_value, interface_hessian_factor, potential_ambient_grad,
                       potential_eval)
from .geometry import FDConfig, fd_jet, inner, weighted_laplacian
from .partitions import (PartitionSpec, interface_samples, interface_sphere, junction_data,
                         nonempty_pairs, triple_points)

VERIFY_FD = FDConfig(h=2e-3, order=4)
SAMPLE_RADIUS = {"S": None, "R": 4.0, "H": 2.5, "G": 4.0}


@dataclass(frozen=True)
class CheckSpec:
    name: str = ""
    samples: int = 32
    seed: int = 0
    fd: FDConfig = VERIFY_FD
    tol: float = 1e-10

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractError("tolerance must be positive")


@dataclass
class VerificationReport:
    check: str
    max: float
    mean: float
    samples: int
    tol: float
    components: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max <= self.tol)

    def to_json(self) -> dict:
        d = {"check": self.check, "max": float(self.max), "mean": float(self.mean),
             "samples": int(self.samples), "tol": float(self.tol), "pass": self.passed}
        if self.components:
            d["components"] = {k: float(v) for k, v in sorted(self.components.items())}
        return d


def _report(name, values, tol, components=None):
    v = np.abs(np.concatenate([np.ravel(x) for x in values])) if values else np.zeros(0)
    mx = float(v.max()) if v.size else 0.0
    mean = float(v.mean()) if v.size else 0.0
    return VerificationReport(name, mx, mean, int(v.size), tol, components or {})


# ---------------------------------------------------------------------------
# sample plumbing

@dataclass
class PartitionSamples:
    pairs: list
    points: dict          # (i, j) -> (m, d) interface points
    triples: list         # list of TriplePointSample


def collect_samples(part: PartitionSpec, samples: int = 32, triple_total: int = 100, seed=0,
                    pairs=None) -> PartitionSamples:
    if pairs is None:
        pairs = nonempty_pairs(part, seed=seed)
    radius = SAMPLE_RADIUS[part.space.kind]
    pts = {}
    for i, j in pairs:
        P = interface_samples(part, i, j, max(4 * samples, 256), seed, radius)
        if len(P):
            pts[(i, j)] = P[:samples]
    pairset = set(pairs)
    cand = [t for t in itertools.combinations(range(part.q), 3)
            if {(t[0], t[1]), (t[1], t[2]), (t[0], t[2])} <= pairset]
    found = {}
    per = max(1, triple_total)
    for t in cand:
        try:
            P = triple_points(part, *t, count=per, seed=seed, radius=radius)
        except EmptyJunctionError:
            continue
        if len(P):
            found[t] = P
    triples = []
    # round-robin so the total is spread over every junction
    for r in range(per):
        for t, P in found.items():
            if r < len(P) and len(triples) < triple_total:
                triples.append(junction_data(part, *t, P[r]))
    if cand and not triples:
        raise SamplingError("no triple points found although adjacent interfaces exist")
    return PartitionSamples(list(pairs), pts, triples)


def _unit(v, sig):
    return v / np.sqrt(np.abs(inner(v, v, sig)))[..., None]


# ---------------------------------------------------------------------------
# stationarity and the three-tensor

def check_stationarity(part: PartitionSpec, spec: CheckSpec = CheckSpec("stationarity"),
                       data: Optional[PartitionSamples] = None) -> VerificationReport:
    """Constant mean curvature, 120-degree junctions and Lagrange consistency.

    Normals are normalized before use, so partitions whose parameters violate
    the sphere relation show their defect here.
    """
    data = data or collect_samples(part, spec.samples, seed=spec.seed)
    sig = part.space.signature
    n = part.space.n
    H = {}
    const_dev, unit_dev = [], []
    for (i, j), P in data.points.items():
        sph = interface_sphere(part, i, j, validate=False)
        N = sph.normal(P)
        nn = inner(N, N, sig)
        unit_dev.append(nn - 1.0)
        if part.space.kind == "G":
            h = -np.einsum("md,md->m", P, N) / np.sqrt(nn)
        else:
            # geodesic curvature of {eq = 0} is k / |c + k p|
            h = (n - 1) * sph.k / np.sqrt(nn)
        const_dev.append(h - h.mean())
        H[(i, j)] = float(h.mean())
    sums, angles = [], []
    for s in data.triples:
        nu = [_unit(v, sig) for v in s.normals]
        sums.append(np.abs(nu[0] + nu[1] + nu[2]).max())
        for a, b in ((0, 1), (1, 2), (2, 0)):
            angles.append(inner(nu[a], nu[b], sig) + 0.5)
    lag = [np.zeros(1)]
    if H:
        keys = sorted(H)
        A = np.zeros((len(keys), part.q))
        for r, (i, j) in enumerate(keys):
            A[r, i], A[r, j] = 1.0, -1.0
        h = np.array([H[k] for k in keys])
        lam, *_ = np.linalg.lstsq(A, h, rcond=None)
        lag = [A @ lam - h]
    comp = {
        "mean_curvature": float(np.max(np.abs(np.concatenate(const_dev)))) if const_dev else 0.0,
        "unit_normal": float(np.max(np.abs(np.concatenate(unit_dev)))) if unit_dev else 0.0,
        "normal_sum": float(max(sums)) if sums else 0.0,
        "angle": float(np.max(np.abs(angles))) if angles else 0.0,
        "lagrange": float(np.max(np.abs(lag[0]))),
    }
    return _report(spec.name or "stationarity", const_dev + unit_dev + [np.array(sums)]
                   + [np.array(angles)] + lag, spec.tol, comp)


def three_tensor(normals, conormals):
    """T = sum over cyclic pairs of n (x) n (x) m - m (x) n (x) n."""
    T = 0.0
    for nv, mv in zip(normals, conormals):
        T = T + np.einsum("a,b,c->abc", nv, nv, mv) - np.einsum("a,b,c->abc", mv, nv, nv)
    return T


def check_three_tensor(part: PartitionSpec, spec: CheckSpec = CheckSpec("three_tensor"),
                       data: Optional[PartitionSamples] = None, conormal_flip=None) -> VerificationReport:
    """``conormal_flip`` (index 0-2) negates one co-normal; used for negative controls."""
    data = data or collect_samples(part, spec.samples, seed=spec.seed)
    if not data.triples:
        raise SamplingError("three-tensor check needs triple points")
    vals = []
    for s in data.triples:
        cn = list(s.conormals)
        if conormal_flip is not None:
            cn[conormal_flip] = -cn[conormal_flip]
        vals.append(np.abs(three_tensor(s.normals, cn)).max())
    return _report(spec.name or "three_tensor", [np.array(vals)], spec.tol)


# ---------------------------------------------------------------------------
# potential identities

def check_conformal_bc(part: PartitionSpec, V: PotentialSpec,
                       spec: CheckSpec = CheckSpec("conformal_bc"),
                       data: Optional[PartitionSamples] = None) -> VerificationReport:
    data = data or collect_samples(part, spec.samples, seed=spec.seed)
    sig = part.space.signature
    vals = []
    for s in data.triples:
        g = potential_ambient_grad(V, s.p)
        v = potential_eval(V, s.p)
        for m, bar in zip(s.conormals, s.barII):
            vals.append(inner(g, m, sig) - bar * v)
    return _report(spec.name or "conformal_bc", [np.array(vals)], spec.tol)


def _interface_jets(part, V, data, cfg):
    for (i, j), P in data.points.items():
        sph = interface_sphere(part, i, j)
        jet = fd_jet(sph, P, lambda X: potential_eval(V, X), cfg)
        yield sph, P, jet


def check_LJac_potential(part: PartitionSpec, V: PotentialSpec, cert: Optional[FlatnessCertificate] = None,
                         spec: CheckSpec = CheckSpec("LJac_potential", tol=1e-6),
                         data: Optional[PartitionSamples] = None) -> VerificationReport:
    """FD surface Laplacian of V plus the closed-form Jacobi potential."""
    data = data or collect_samples(part, spec.samples, seed=spec.seed)
    target = expected_LJac_value(part.space, cert)
    ljac, hess = [], []
    for sph, P, jet in _interface_jets(part, V, data, spec.fd):
        lap = weighted_laplacian(sph, P, jet)
        Vv = potential_eval(V, P)
        ljac.append(lap + sph.jacobi_potential() * Vv - target)
        fac = interface_hessian_factor(V, sph, Vv)
        eye = np.eye(jet.hess.shape[1])
        hess.append((jet.hess - fac[:, None, None] * eye).reshape(len(P), -1))
    comp = {"ljac": float(np.max(np.abs(np.concatenate(ljac)))) if ljac else 0.0,
            "hessian": float(np.max(np.abs(np.concatenate(hess)))) if hess else 0.0}
    return _report(spec.name or "LJac_potential", ljac + hess, spec.tol, comp)


def ricV_tensor(sph, P, jet, Vv):
    """V Ric^V = V Ric_Sigma - Hess V + (Lap V) g, frame components (m, n-1, n-1)."""
    m = jet.hess.shape[1]
    eye = np.eye(m)
    lap = weighted_laplacian(sph, P, jet)
    ric = sph.intrinsic_ricci()
    if sph.space.weighted:
        ric = ric + 1.0      # Hess W restricted to a hyperplane
    return (Vv * ric + lap)[:, None, None] * eye - jet.hess


def check_RicV(part: PartitionSpec, V: PotentialSpec, cert: Optional[FlatnessCertificate] = None,
               spec: CheckSpec = CheckSpec("RicV", tol=1e-6),
               data: Optional[PartitionSamples] = None) -> VerificationReport:
    if part.space.n < 3:
        raise ContractError("V Ric^V is identically zero on curves; n = 2 is rejected")
    data = data or collect_samples(part, spec.samples, seed=spec.seed)
    target = expected_RicV_value(part.space, cert)
    dev = []
    for sph, P, jet in _interface_jets(part, V, data, spec.fd):
        M = ricV_tensor(sph, P, jet, potential_eval(V, P))
        dev.append(np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2))) - target)
    return _report(spec.name or "RicV", dev, spec.tol)


def run_potential_suite(part: PartitionSpec, V: PotentialSpec, cert=None, samples: int = 16,
                        seed=0, fd: FDConfig = VERIFY_FD, pairs=None) -> dict:
    data = collect_samples(part, samples, seed=seed, pairs=pairs)
    out = {"conformal_bc": check_conformal_bc(part, V, CheckSpec("conformal_bc", samples, seed, fd, 1e-10), data),
           "LJac_potential": check_LJac_potential(part, V, cert, CheckSpec("LJac_potential", samples, seed, fd, 1e-6), data)}
    if part.space.n >= 3:
        out["RicV"] = check_RicV(part, V, cert, CheckSpec("RicV", samples, seed, fd, 1e-6), data)
    return out


# ---------------------------------------------------------------------------
# integrated identities

def bochner_integrands(mesh, V, u, cfg: FDConfig = VERIFY_FD):
    """Pointwise left/right Bochner integrands at the mesh vertices."""
    sph = mesh.sphere
    P = mesh.points
    ju = fd_jet(sph, P, u, cfg, mesh.frames)
    jv = fd_jet(sph, P, V, cfg, mesh.frames)
    Vv = jv.value
    uu = ju.value
    lap_u = weighted_laplacian(sph, P, ju)
    lap_v = weighted_laplacian(sph, P, jv)
    left = Vv * (lap_u - lap_v / Vv * uu) ** 2
    A = ju.hess - (uu / Vv)[:, None, None] * jv.hess
    X = ju.grad - (uu / Vv)[:, None] * jv.grad
    M = ricV_tensor(sph, P, jv, Vv)
    right = Vv * np.einsum("mab,mab->m", A, A) + np.einsum("ma,mab,mb->m", X, M, X)
    return left, right


def check_bochner_closed(mesh, V, u, spec: CheckSpec = CheckSpec("bochner", tol=0.02)) -> VerificationReport:
    """Relative gap between the two sides of the integrated Bochner identity."""
    if not mesh.closed:
        raise ContractError("Bochner check needs a closed interface mesh")
    Vf = V if callable(V) else (lambda X: potential_eval(V, X))
    left, right = bochner_integrands(mesh, Vf, u, spec.fd)
    if np.any(Vf(mesh.points) <= 0):
        raise ContractError("potential must be positive on the mesh")
    L = float(mesh.areas @ left)
    R = float(mesh.areas @ right)
    scale = max(abs(L), abs(R))
    gap = abs(L - R) / scale if scale > 1e-300 else 0.0
    return VerificationReport(spec.name or "bochner", gap, gap, len(mesh.points), spec.tol,
                              {"left": L, "right": R})


def check_volume_first_variation(cx, ops, u, tol: float = 1e-8) -> VerificationReport:
    """|delta^1 Vol| of f = L_V u for a discrete admissible u (columns = trials)."""
    from .discrete import delta1_vol

    U = np.atleast_2d(np.asarray(u, dtype=float).T).T
    vals = [np.abs(delta1_vol(cx, ops.LV @ U[:, r])) for r in range(U.shape[1])]
    return _report("volume_first_variation", vals, tol)
