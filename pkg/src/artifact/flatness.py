"""Mobius-flatness certificates, hypo/epi classification and flattening potentials.

A partition is Mobius-flat when some xi in the open unit ball of R^{n+1}
solves ``<c_ij, xi> + k_ij = 0`` on every nonempty interface, with (c, k) the
S-lifted parameters.  The potentials are

* S: ``V = 1 - <p, xi>``
* R: ``V = |x|^2/2 - <x, theta> + eta``, theta = xibar/(1-xi0), eta = (1+xi0)/(2(1-xi0))
* H: ``V = -xi0 - <y, (xibar, 1)>_1``
* G: ``V = 1``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, InfeasibleError
from .geometry import GeneralizedSphere, Space, inner, on_space_residual
from .partitions import PartitionSpec, interface_sphere, nonempty_pairs, sphere_lift

FEAS_TOL = 1e-9
NEAR_TOL = 1e-6
BALL_MARGIN = 1e-9


@dataclass(frozen=True)
class FlatnessCertificate:
    xi: np.ndarray
    residual: float
    feasible: bool
    dim: int

    @property
    def status(self) -> str:
        if self.feasible:
            return "feasible"
        if self.residual <= FEAS_TOL:
            return "outside-ball"
        if self.residual <= NEAR_TOL:
            return "near-feasible"
        return "infeasible"

    def to_json(self) -> dict:
        return {"xi": [float(v) for v in self.xi], "residual": float(self.residual),
                "feasible": bool(self.feasible), "dim": int(self.dim)}

    @classmethod
    def from_json(cls, data: dict) -> "FlatnessCertificate":
        try:
            return cls(np.asarray(data["xi"], dtype=float), float(data["residual"]),
                       bool(data["feasible"]), int(data["dim"]))
        except KeyError as exc:
            raise ContractError(f"malformed certificate JSON: missing field {exc}") from exc


def flatness_system(part: PartitionSpec, pairs=None, seed=0):
    """Rows (c_ij, -k_ij) of the lifted constraints over nonempty interfaces."""
    if pairs is None:
        pairs = nonempty_pairs(part, seed=seed)
    C, K = sphere_lift(part)
    A = np.array([C[i] - C[j] for i, j in pairs]).reshape(-1, C.shape[1])
    b = -np.array([K[i] - K[j] for i, j in pairs])
    return A, b


def _solve(A, b, d):
    if len(A) == 0:
        return np.zeros(d), 0.0, 0, np.eye(d)
    xi, *_ = np.linalg.lstsq(A, b, rcond=None)
    _, sv, Vt = np.linalg.svd(A)
    rank = int(np.sum(sv > 1e-10 * max(sv[0], 1.0)))
    null = Vt[rank:].T
    res = float(np.max(np.abs(A @ xi - b)))
    return xi, res, rank, null


def solve_flatness(part: PartitionSpec, pairs=None, seed=0) -> FlatnessCertificate:
    """Minimum-norm xi over the nonempty-interface constraints.

    The minimum-norm point of the affine solution set is also the point of
    smallest |xi|, so a single least-squares solve settles ball membership.
    The reported residual also carries the sphere-relation defect of the
    nonempty interfaces: a single-cell curvature change keeps the linear
    system solvable and only shows up there.
    """
    n = part.space.n
    if part.space.kind == "G":
        return FlatnessCertificate(np.zeros(n + 1), 0.0, True, n + 1)
    if pairs is None:
        pairs = nonempty_pairs(part, seed=seed)
    A, b = flatness_system(part, pairs, seed)
    xi, res, rank, _ = _solve(A, b, n + 1)
    defect = max((interface_sphere(part, i, j, validate=False).consistency_residual()
                  for i, j in pairs), default=0.0)
    res = max(res, float(defect))
    feasible = res <= FEAS_TOL and np.linalg.norm(xi) < 1 - BALL_MARGIN
    xi.setflags(write=False)
    return FlatnessCertificate(xi, res, bool(feasible), n + 1 - rank)


@dataclass(frozen=True)
class HypoEpi:
    classification: str
    witness: Optional[np.ndarray]
    xi0_inf: float

    def to_json(self):
        return {"classification": self.classification,
                "witness": None if self.witness is None else self.witness.tolist(),
                "xi0_inf": self.xi0_inf}


def classify_hypo_epi(part: PartitionSpec, pairs=None, seed=0) -> HypoEpi:
    """Hypo iff some flatness witness in the open ball has xi0 <= 0."""
    if part.space.kind != "H":
        raise ContractError("hypo/epi classification is defined on H^n")
    A, b = flatness_system(part, pairs, seed)
    xi, res, _, null = _solve(A, b, part.space.n + 1)
    if res > FEAS_TOL or np.linalg.norm(xi) >= 1 - BALL_MARGIN:
        raise InfeasibleError("partition is not Mobius-flat")
    g = null.T[:, -1] if null.size else np.zeros(0)   # N^T e0
    gn = float(np.linalg.norm(g))
    slack = np.sqrt(max(0.0, 1.0 - xi @ xi))
    xi0_inf = float(xi[-1] - gn * slack)
    if xi[-1] <= 0:
        return HypoEpi("Hypo", xi.copy(), xi0_inf)
    if gn > 1e-12 and xi0_inf < 0:
        w = xi - (xi[-1] / gn) * (null @ g) / gn
        w[-1] = 0.0 if abs(w[-1]) < 1e-14 else w[-1]
        return HypoEpi("Hypo", w, xi0_inf)
    return HypoEpi("Epi", None, xi0_inf)


# ---------------------------------------------------------------------------
# potentials

FORMS = ("SphereAffine", "EuclidQuadratic", "MinkowskiAffine", "GaussianConst")


@dataclass(frozen=True)
class PotentialSpec:
    space: Space
    form: str
    xi: Optional[np.ndarray] = None        # SphereAffine, MinkowskiAffine (xibar, xi0)
    theta: Optional[np.ndarray] = None     # EuclidQuadratic
    eta: Optional[float] = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ContractError(f"unknown potential form {self.form!r}")
        expected = {"S": "SphereAffine", "R": "EuclidQuadratic", "H": "MinkowskiAffine",
                    "G": "GaussianConst"}[self.space.kind]
        if self.form != expected:
            raise ContractError(f"{self.form} is not the potential family of {self.space.kind}")
        n = self.space.n
        if self.form in ("SphereAffine", "MinkowskiAffine"):
            xi = np.array(self.xi, dtype=float)
            if xi.shape != (n + 1,):
                raise ContractError("xi must have length n+1")
            if not xi @ xi < 1:
                raise ContractError("|xi| must be below 1")
            xi.setflags(write=False)
            object.__setattr__(self, "xi", xi)
        if self.form == "EuclidQuadratic":
            th = np.array(self.theta, dtype=float)
            if th.shape != (n,):
                raise ContractError("theta must have length n")
            if not float(self.eta) - 0.5 * th @ th > 0:
                raise ContractError("eta - |theta|^2/2 must be positive")
            th.setflags(write=False)
            object.__setattr__(self, "theta", th)
            object.__setattr__(self, "eta", float(self.eta))

    @property
    def xi0(self) -> float:
        return float(self.xi[-1]) if self.xi is not None else 0.0

    def __call__(self, P):
        return potential_eval(self, P)

    def to_json(self) -> dict:
        d = {"space": self.space.to_json(), "form": self.form}
        if self.form == "SphereAffine":
            d["xi"] = self.xi.tolist()
        elif self.form == "MinkowskiAffine":
            d["xiBar"] = self.xi[:-1].tolist()
            d["xi0"] = float(self.xi[-1])
        elif self.form == "EuclidQuadratic":
            d["theta"] = self.theta.tolist()
            d["eta"] = self.eta
        return d

    @classmethod
    def from_json(cls, data: dict) -> "PotentialSpec":
        try:
            space = Space(data["space"]["kind"], int(data["space"]["n"]))
            form = data["form"]
            if form == "SphereAffine":
                return cls(space, form, xi=data["xi"])
            if form == "MinkowskiAffine":
                return cls(space, form, xi=list(data["xiBar"]) + [data["xi0"]])
            if form == "EuclidQuadratic":
                return cls(space, form, theta=data["theta"], eta=data["eta"])
            return cls(space, form)
        except KeyError as exc:
            raise ContractError(f"malformed potential JSON: missing field {exc}") from exc


def build_potential(space: Space, cert: Optional[FlatnessCertificate] = None) -> PotentialSpec:
    if space.kind == "G":
        return PotentialSpec(space, "GaussianConst")
    if cert is None or not cert.feasible:
        raise InfeasibleError("a feasible flatness certificate is required")
    xi = np.asarray(cert.xi, dtype=float)
    if space.kind == "S":
        return PotentialSpec(space, "SphereAffine", xi=xi)
    if space.kind == "H":
        return PotentialSpec(space, "MinkowskiAffine", xi=xi)
    x0 = xi[-1]
    if 1 - x0 <= 0:
        raise ContractError("xi0 = 1 is degenerate on R^n")
    return PotentialSpec(space, "EuclidQuadratic", theta=xi[:-1] / (1 - x0),
                         eta=0.5 * (1 + x0) / (1 - x0))


def potential_eval(V: PotentialSpec, P):
    P = np.asarray(P, dtype=float)
    if V.form == "SphereAffine":
        return 1.0 - P @ V.xi
    if V.form == "EuclidQuadratic":
        return 0.5 * np.einsum("...i,...i->...", P, P) - P @ V.theta + V.eta
    if V.form == "MinkowskiAffine":
        zeta = np.append(V.xi[:-1], 1.0)
        return -V.xi[-1] - inner(P, zeta, "lorentzian")
    return np.ones(P.shape[:-1])


def potential_ambient_grad(V: PotentialSpec, P):
    """Intrinsic gradient on the model space, as an ambient (tangent) vector."""
    P = np.asarray(P, dtype=float)
    if V.form == "SphereAffine":
        return -V.xi + (P @ V.xi)[..., None] * P
    if V.form == "EuclidQuadratic":
        return P - V.theta
    if V.form == "MinkowskiAffine":
        zeta = np.append(V.xi[:-1], 1.0)
        return -zeta - inner(zeta, P, "lorentzian")[..., None] * P
    return np.zeros_like(P)


def potential_normal_derivative(V: PotentialSpec, sphere: GeneralizedSphere, p, tol: float = 1e-8):
    p = np.asarray(p, dtype=float)
    scale = 1.0 + (np.einsum("...i,...i->...", p, p) if sphere.space.kind == "R" else 0.0)
    if np.any(np.abs(sphere.equation(p)) > tol * scale):
        raise ContractError("point is not on the sphere")
    return inner(potential_ambient_grad(V, p), sphere.normal(p), sphere.sig)


def check_positive(V: PotentialSpec, P) -> bool:
    return bool(np.all(potential_eval(V, P) > 0))


def expected_LJac_value(space: Space, cert: Optional[FlatnessCertificate] = None) -> float:
    if space.kind == "G":
        return 1.0
    if space.kind == "H":
        return (space.n - 1) * float(cert.xi[-1])
    return float(space.n - 1)


def expected_RicV_value(space: Space, cert: Optional[FlatnessCertificate] = None) -> float:
    if space.kind == "G":
        return 1.0
    if space.kind == "H":
        return (space.n - 2) * float(cert.xi[-1])
    return float(space.n - 2)


def interface_hessian_factor(V: PotentialSpec, sphere: GeneralizedSphere, Vval):
    """Closed form: the interface Hessian of V equals this multiple of the metric."""
    k = sphere.curvature
    kind = sphere.space.kind
    if kind == "S":
        return 1.0 - (1.0 + k * k) * Vval
    if kind == "R":
        return 1.0 - k * k * Vval
    if kind == "H":
        return V.xi0 - (k * k - 1.0) * Vval
    return np.zeros_like(Vval)


def sample_model_space(space: Space, count: int, rng, radius: float = 6.0):
    """Random points of the model space (R, H within the given radius)."""
    n = space.n
    if space.kind == "S":
        P = rng.standard_normal((count, n + 1))
        return P / np.linalg.norm(P, axis=1, keepdims=True)
    if space.kind == "H":
        d = rng.standard_normal((count, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.random(count)[:, None]
        return np.hstack([d * np.sinh(r), np.cosh(r)])
    return radius * rng.standard_normal((count, n)) / np.sqrt(n)
