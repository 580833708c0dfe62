"""Vector algebra, model spaces, generalized spheres, exact charts and FD calculus.

Ambient conventions
-------------------
* ``S``: unit sphere in R^{n+1}.
* ``R``: Euclidean space R^n.
* ``H``: upper hyperboloid in R^{n,1}; the time coordinate is stored last so
  that ``<x, y>_1 = sum(x[:-1] * y[:-1]) - x[-1] * y[-1]``.
* ``G``: R^n with Gaussian weight exp(-|x|^2 / 2).

Charts on interfaces are geodesic normal coordinates written in closed form,
so finite differences at the chart center give covariant derivatives with no
metric correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .errors import ContractError

Signature = Literal["euclidean", "lorentzian"]
SPACE_KINDS = ("S", "R", "H", "G")

# chart sign of the ambient curvature term, see ``GeneralizedSphere.kappa``
_SIGMA = {"S": 1.0, "R": 0.0, "H": -1.0, "G": 0.0}


@dataclass(frozen=True)
class Space:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ContractError(f"unknown space kind {self.kind!r}")
        if not (isinstance(self.n, (int, np.integer)) and 2 <= self.n <= 8):
            raise ContractError(f"dimension n={self.n} outside [2, 8]")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dim(self) -> int:
        """Length of stored point vectors."""
        return self.n + 1 if self.kind in ("S", "H") else self.n

    @property
    def signature(self) -> Signature:
        return "lorentzian" if self.kind == "H" else "euclidean"

    @property
    def weighted(self) -> bool:
        return self.kind == "G"

    def to_json(self) -> dict:
        return {"kind": self.kind, "n": self.n}


def inner(x, y, sig: Signature = "euclidean"):
    """Inner product along the last axis, broadcasting over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ContractError(f"dimension mismatch {x.shape[-1]} != {y.shape[-1]}")
    s = np.einsum("...i,...i->...", x, y)
    if sig == "lorentzian":
        s = s - 2.0 * x[..., -1] * y[..., -1]
    elif sig != "euclidean":
        raise ContractError(f"unknown signature {sig!r}")
    return s


def lorentz_flip(x):
    """Apply diag(1, ..., 1, -1)."""
    x = np.array(x, dtype=float, copy=True)
    x[..., -1] *= -1.0
    return x


def on_space_residual(space: Space, p):
    """Distance-like defect of ``p`` from the model manifold (inf on the wrong sheet)."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != space.dim:
        raise ContractError(f"point has length {p.shape[-1]}, expected {space.dim}")
    if space.kind == "S":
        return np.abs(inner(p, p) - 1.0)
    if space.kind == "H":
        r = np.abs(inner(p, p, "lorentzian") + 1.0)
        return np.where(p[..., -1] > 0, r, np.inf)
    return np.zeros(p.shape[:-1])


def _as_vector(v, d=None, name="vector"):
    v = np.array(v, dtype=float)
    if v.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"{name} has non-finite entries")
    if d is not None and v.shape[0] != d:
        raise ContractError(f"{name} has length {v.shape[0]}, expected {d}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class GeneralizedSphere:
    """Co-oriented constant-curvature hypersurface ``{eq(p) = 0}``.

    The defining function is normalized so that its (signature) gradient along
    the model space equals the unit normal ``n = c + k p``.
    """

    space: Space
    c: np.ndarray
    k: float
    kS: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "c", _as_vector(self.c, self.space.dim, "c"))
        object.__setattr__(self, "k", float(self.k))
        if self.space.kind == "R":
            if self.kS is None:
                raise ContractError("R spheres need the kS companion parameter")
            object.__setattr__(self, "kS", float(self.kS))
        elif self.kS is not None:
            raise ContractError("kS is only meaningful on R")

    @property
    def sig(self) -> Signature:
        return self.space.signature

    @property
    def curvature(self) -> float:
        """Principal curvature of the interface (0 for Gaussian hyperplanes)."""
        return 0.0 if self.space.kind == "G" else self.k

    @property
    def kappa(self) -> float:
        """Sectional curvature of the interface with its induced metric."""
        return self.curvature ** 2 + _SIGMA[self.space.kind]

    def consistency_residual(self) -> float:
        c, k = self.c, self.k
        kind = self.space.kind
        if kind == "S":
            return abs(c @ c - 1.0 - k * k)
        if kind == "H":
            return abs(inner(c, c, "lorentzian") - 1.0 + k * k)
        if kind == "R":
            return abs(c @ c + k * k - 2.0 * k * self.kS - 1.0)
        return abs(c @ c - 1.0)

    def equation(self, p):
        p = np.asarray(p, dtype=float)
        kind = self.space.kind
        if kind == "S" or kind == "G":
            return p @ self.c + self.k
        if kind == "H":
            return inner(p, self.c, "lorentzian") - self.k
        return 0.5 * self.k * np.einsum("...i,...i->...", p, p) + p @ self.c + self.kS - 0.5 * self.k

    def normal(self, p):
        p = np.asarray(p, dtype=float)
        if self.space.kind == "G":
            return np.broadcast_to(self.c, p.shape).copy()
        return self.c + self.k * p

    def jacobi_potential(self) -> float:
        """Ric_{M,mu}(n, n) + |II|^2, constant along the interface."""
        n = self.space.n
        if self.space.kind == "G":
            return 1.0
        return (n - 1) * self.kappa

    def intrinsic_ricci(self) -> float:
        """Ricci of the unweighted interface as a multiple of its metric."""
        return (self.space.n - 2) * self.kappa


def tangent_frames(space: Space, points, normals):
    """Signature-orthonormal frames of the interface tangent spaces, shape (m, d, n-1)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    Nm = np.atleast_2d(np.asarray(normals, dtype=float))
    rows = [Nm] if space.kind in ("R", "G") else [P, Nm]
    if space.kind == "H":
        rows = [lorentz_flip(r) for r in rows]
    A = np.stack(rows, axis=1)
    _, sv, Vh = np.linalg.svd(A)
    if np.any(sv[:, -1] < 1e-12 * np.maximum(sv[:, 0], 1.0)):
        raise ContractError("degenerate frame: normal parallel to position")
    B = np.swapaxes(Vh[:, A.shape[1]:, :], 1, 2)
    if space.kind == "H":
        JB = B.copy()
        JB[:, -1, :] *= -1.0
        G = np.einsum("mda,mdb->mab", B, JB)
        L = np.linalg.cholesky(G)
        B = np.swapaxes(np.linalg.solve(L, np.swapaxes(B, 1, 2)), 1, 2)
    return B


def _sinc_sq_half(kappa, s):
    """Return (beta(s)/s, b(s)) for the exponential chart with curvature kappa."""
    if kappa > 0:
        a = np.sqrt(kappa)
        beta_over_s = np.sinc(a * s / np.pi)
        half = np.sinc(a * s / (2 * np.pi))
    elif kappa < 0:
        a = np.sqrt(-kappa)
        x = a * s
        with np.errstate(invalid="ignore", divide="ignore"):
            beta_over_s = np.where(x < 1e-4, 1 + x * x / 6, np.sinh(x) / np.where(x == 0, 1, x))
            h = x / 2
            half = np.where(h < 1e-4, 1 + h * h / 6, np.sinh(h) / np.where(h == 0, 1, h))
    else:
        beta_over_s = np.ones_like(s)
        half = np.ones_like(s)
    return beta_over_s, 0.5 * s * s * half * half


def exp_chart_points(sphere: GeneralizedSphere, anchors, frames, T):
    """Evaluate exponential charts.

    anchors (m, d), frames (m, d, n-1), T (..., n-1) shared by all anchors.
    Returns (m, ..., d).
    """
    anchors = np.atleast_2d(anchors)
    T = np.asarray(T, dtype=float)
    sigma = _SIGMA[sphere.space.kind]
    k = sphere.curvature
    Tb = np.broadcast_to(T, (anchors.shape[0],) + T.shape)
    s = np.linalg.norm(Tb, axis=-1)
    bos, b = _sinc_sq_half(sphere.kappa, s)
    extra = (1,) * (Tb.ndim - 2)
    P0 = anchors.reshape(anchors.shape[0], *extra, -1)
    N0 = sphere.normal(anchors).reshape(P0.shape)
    tang = np.einsum("mda,m...a->m...d", frames, Tb)
    return P0 + bos[..., None] * tang - b[..., None] * (k * N0 + sigma * P0)


@dataclass(frozen=True)
class Chart:
    """Exponential chart of an interface centered at ``anchor``."""

    sphere: GeneralizedSphere
    anchor: np.ndarray
    frame: np.ndarray
    radius: float

    def __call__(self, t):
        return exp_chart_points(self.sphere, self.anchor[None], self.frame[None], t)[0]

    @property
    def normal(self):
        return self.sphere.normal(self.anchor)


def chart_radius(sphere: GeneralizedSphere) -> float:
    kap = sphere.kappa
    return float(np.pi / np.sqrt(kap)) if kap > 0 else float("inf")


def sphere_chart(space: Space, sphere: GeneralizedSphere, anchor, tol: float = 1e-10) -> Chart:
    if sphere.space != space:
        raise ContractError("sphere belongs to a different space")
    anchor = _as_vector(anchor, space.dim, "anchor")
    scale = 1.0 + (anchor @ anchor if space.kind == "R" else 0.0)
    if abs(sphere.equation(anchor)) > tol * scale or on_space_residual(space, anchor) > tol:
        raise ContractError("anchor is not on the sphere")
    E = tangent_frames(space, anchor[None], sphere.normal(anchor)[None])[0]
    E.setflags(write=False)
    return Chart(sphere, anchor, E, chart_radius(sphere))


@dataclass(frozen=True)
class FDConfig:
    h: float = 1e-4
    scheme: str = "central"
    order: int = 2

    def __post_init__(self):
        if not (1e-7 <= self.h <= 1e-2):
            raise ContractError(f"FD step {self.h} outside [1e-7, 1e-2]")
        if self.scheme != "central" or self.order not in (2, 4):
            raise ContractError("supported schemes: central differences of order 2 or 4")


def _stencil(m: int, h: float):
    offs = [np.zeros(m)]
    for a in range(m):
        for sgn in (1, -1):
            e = np.zeros(m)
            e[a] = sgn * h
            offs.append(e)
    for a in range(m):
        for b in range(a + 1, m):
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                e = np.zeros(m)
                e[a], e[b] = sa * h, sb * h
                offs.append(e)
    return np.array(offs)


@dataclass
class Jet:
    """Value, chart gradient and chart Hessian of a function at many anchors."""

    value: np.ndarray
    grad: np.ndarray      # (m, n-1) in frame coordinates
    hess: np.ndarray      # (m, n-1, n-1)
    frames: np.ndarray = field(repr=False)

    @property
    def ambient_grad(self):
        return np.einsum("mda,ma->md", self.frames, self.grad)

    @property
    def laplacian(self):
        return np.trace(self.hess, axis1=1, axis2=2)


def fd_jet(sphere: GeneralizedSphere, anchors, F: Callable, cfg: FDConfig = FDConfig(), frames=None) -> Jet:
    """Central-difference value/gradient/Hessian of ``F`` restricted to the sphere.

    Order 4 is Richardson extrapolation of the order-2 stencil at h and 2h
    (the central-difference error expansion is even in h).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if frames is None:
        frames = tangent_frames(sphere.space, anchors, sphere.normal(anchors))
    if cfg.order == 4:
        a = _jet2(sphere, anchors, F, cfg.h, frames)
        b = _jet2(sphere, anchors, F, 2 * cfg.h, frames)
        return Jet(a.value, (4 * a.grad - b.grad) / 3, (4 * a.hess - b.hess) / 3, frames)
    return _jet2(sphere, anchors, F, cfg.h, frames)


def _jet2(sphere, anchors, F, h, frames) -> Jet:
    m = frames.shape[2]
    T = _stencil(m, h)
    vals = np.asarray(F(exp_chart_points(sphere, anchors, frames, T)), dtype=float)
    f0 = vals[:, 0]
    plus = vals[:, 1:2 * m + 1:2]
    minus = vals[:, 2:2 * m + 1:2]
    grad = (plus - minus) / (2 * h)
    H = np.zeros((anchors.shape[0], m, m))
    idx = np.arange(m)
    H[:, idx, idx] = (plus - 2 * f0[:, None] + minus) / (h * h)
    pos = 2 * m + 1
    for a in range(m):
        for b in range(a + 1, m):
            pp, pm, mp, mm = (vals[:, pos + r] for r in range(4))
            H[:, a, b] = H[:, b, a] = (pp - pm - mp + mm) / (4 * h * h)
            pos += 4
    return Jet(f0, grad, H, frames)


def weighted_laplacian(sphere: GeneralizedSphere, anchors, jet: Jet):
    """Delta_{Sigma,mu}; subtracts <grad F, grad W> on Gaussian space."""
    lap = jet.laplacian
    if sphere.space.weighted:
        gW = np.einsum("mda,md->ma", jet.frames, np.atleast_2d(anchors))
        lap = lap - np.einsum("ma,ma->m", jet.grad, gW)
    return lap


def fd_surface_gradient(chart: Chart, F: Callable, cfg: FDConfig = FDConfig()):
    """Surface gradient as an ambient tangent vector."""
    jet = fd_jet(chart.sphere, chart.anchor[None], F, cfg, chart.frame[None])
    return jet.ambient_grad[0]


def fd_surface_hessian(chart: Chart, F: Callable, cfg: FDConfig = FDConfig()):
    """Covariant Hessian in the chart's orthonormal frame."""
    return fd_jet(chart.sphere, chart.anchor[None], F, cfg, chart.frame[None]).hess[0]


def fd_surface_laplacian(chart: Chart, F: Callable, cfg: FDConfig = FDConfig()) -> float:
    jet = fd_jet(chart.sphere, chart.anchor[None], F, cfg, chart.frame[None])
    return float(weighted_laplacian(chart.sphere, chart.anchor[None], jet)[0])


def geodesic_curve(sphere: GeneralizedSphere, p0, u, s):
    """Arc-length parametrized curve on a 1-dimensional interface (n = 2).

    Returns points and unit tangents at parameters ``s``; ``u`` is the unit
    tangent at ``p0``.
    """
    s = np.asarray(s, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    u = np.asarray(u, dtype=float)
    kap = sphere.kappa
    a = sphere.curvature * sphere.normal(p0) + _SIGMA[sphere.space.kind] * p0
    if kap > 0:
        r = np.sqrt(kap)
        beta, cs = np.sin(r * s) / r, np.cos(r * s)
        b = (1 - cs) / kap
    elif kap < 0:
        r = np.sqrt(-kap)
        beta, cs = np.sinh(r * s) / r, np.cosh(r * s)
        b = (cs - 1) / (-kap)
    else:
        beta, cs, b = s, np.ones_like(s), 0.5 * s * s
    P = p0 + beta[..., None] * u - b[..., None] * a
    T = cs[..., None] * u - beta[..., None] * a
    return P, T


def geodesic_param(sphere: GeneralizedSphere, p0, u, P):
    """Inverse of :func:`geodesic_curve` (principal branch for closed curves)."""
    P = np.asarray(P, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    sig = sphere.sig
    kap = sphere.kappa
    a = sphere.curvature * sphere.normal(p0) + _SIGMA[sphere.space.kind] * p0
    D = P - p0
    beta = inner(D, u, sig)
    if kap > 0:
        r = np.sqrt(kap)
        b = -inner(D, a, sig) / kap
        return np.arctan2(r * beta, 1 - kap * b) / r
    if kap < 0:
        r = np.sqrt(-kap)
        return np.arcsinh(r * beta) / r
    return beta
