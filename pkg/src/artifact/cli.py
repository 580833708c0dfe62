"""Command-line interface: ``artifact <command> [options]``.

Exit codes: 0 all checks pass, 2 checked and failed (or infeasible), 1 error.
Every report carries the seed it was produced with; JSON is written with
sorted keys so identical inputs give identical bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import discrete, families
from .errors import ArtifactError, ContractError, InfeasibleError
from .flatness import (FlatnessCertificate, PotentialSpec, build_potential, classify_hypo_epi,
                       solve_flatness)
from .geometry import Space
from .mobius import MobiusMap, params_R_from_S, params_S_from_H
from .partitions import PartitionSpec, estimate_volumes, interface_sphere, make_partition, scores
from .verification import (CheckSpec, check_stationarity, collect_samples, check_three_tensor, run_potential_suite)

log = logging.getLogger("artifact")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
FAMILIES = ("standard", "cluster", "ball", "gaussian-y", "parallel-lines", "lattice", "hex")


class UsageError(ContractError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------------------
# file helpers

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path, text: str):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _load_json(path, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc.strerror}", what) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}", what) from exc


def _load_partition(path) -> PartitionSpec:
    return PartitionSpec.from_json(_load_json(path, "partition"))


def _potential_for(part: PartitionSpec, args):
    """(potential, certificate) from --potential, --certificate or a fresh solve."""
    if part.space.kind == "G":
        return build_potential(part.space), None
    if getattr(args, "potential", None):
        return PotentialSpec.from_json(_load_json(args.potential, "potential")), None
    if getattr(args, "certificate", None):
        cert = FlatnessCertificate.from_json(_load_json(args.certificate, "certificate"))
    else:
        cert = solve_flatness(part, seed=args.seed)
    return build_potential(part.space, cert), cert


# ---------------------------------------------------------------------------
# commands

def cmd_construct(args) -> int:
    fam = args.family
    if fam == "standard":
        if args.space not in ("S", "R", "H"):
            raise UsageError("standard partitions live on S, R or H", "space")
        if not 2 <= args.q <= args.n + 2:
            raise UsageError(f"q must lie in [2, n+2] = [2, {args.n + 2}]", "q")
        mmap = MobiusMap.from_json(_load_json(args.mobius, "mobius")) if args.mobius else None
        part, keep = families.standard_partition(args.space, args.n, args.q, mmap, seed=args.seed)
        if args.space == "H" and len(keep) < args.q:
            log.info("H pull-back retained cells %s", keep)
    elif fam == "cluster":
        part = families.h_cluster(args.n, args.q, seed=args.seed)
    elif fam == "ball":
        part = families.geodesic_ball(args.n, args.rho)
    elif fam == "gaussian-y":
        part = families.gaussian_Y()
    elif fam == "parallel-lines":
        part = families.gaussian_parallel_lines()
    elif fam == "lattice":
        part = families.lattice_patch()
    else:
        part = families.hex_patch()
    res = {f"{i},{j}": interface_sphere(part, i, j, validate=False).consistency_residual()
           for i in range(part.q) for j in range(i + 1, part.q)}
    log.info("consistency residuals: max %.3e", max(res.values()))
    _write(args.out, _dump(part.to_json()))
    return EXIT_OK


def cmd_flatness(args) -> int:
    part = _load_partition(args.partition)
    cert = solve_flatness(part, seed=args.seed)
    out = {"seed": args.seed, "certificate": cert.to_json(), "status": cert.status}
    if part.space.kind == "H" and cert.feasible:
        out["hypoEpi"] = classify_hypo_epi(part, seed=args.seed).to_json()
    _write(args.out, _dump(out))
    return EXIT_OK if cert.feasible else EXIT_FAIL


def cmd_potential(args) -> int:
    part = _load_partition(args.partition)
    try:
        V, cert = _potential_for(part, args)
    except InfeasibleError as exc:
        _write(args.out, _dump({"seed": args.seed, "error": "infeasible", "message": str(exc)}))
        return EXIT_FAIL
    out = {"seed": args.seed, "potential": V.to_json()}
    if cert is not None:
        out["certificate"] = cert.to_json()
    _write(args.out, _dump(out))
    return EXIT_OK


def cmd_verify(args) -> int:
    part = _load_partition(args.partition)
    data = collect_samples(part, args.samples, seed=args.seed)
    reports = {"stationarity": check_stationarity(part, CheckSpec("stationarity", args.samples, args.seed), data)}
    out = {"seed": args.seed}
    if data.triples:
        reports["three_tensor"] = check_three_tensor(part, CheckSpec("three_tensor", args.samples, args.seed), data)
    else:
        out["three_tensor"] = "skipped: no triple points"
    try:
        V, cert = _potential_for(part, args)
    except InfeasibleError as exc:
        V = None
        out["potential"] = {"error": "infeasible", "message": str(exc)}
    if V is not None:
        reports.update(run_potential_suite(part, V, cert, samples=args.samples, seed=args.seed))
        out["potential"] = V.to_json()
    out["reports"] = {k: r.to_json() for k, r in reports.items()}
    ok = V is not None and all(r.passed for r in reports.values())
    out["pass"] = ok
    _write(args.out, _dump(out))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_stability(args) -> int:
    part = _load_partition(args.partition)
    if part.space.kind == "G":
        V = None
    else:
        try:
            V, _ = _potential_for(part, args)
        except InfeasibleError as exc:
            _write(args.out, _dump({"seed": args.seed, "error": "infeasible", "message": str(exc)}))
            return EXIT_FAIL
    cx = discrete.build_complex_1d(part, resolution=args.resolution, radius=args.radius,
                                   cells_per_edge=args.cells_per_edge, seed=args.seed)
    ops = discrete.assemble_operators(cx, V, jacobi_override=args.jacobi_override)
    rep = discrete.stability_margin(cx, ops, args.mode)
    U = discrete.random_admissible(ops, args.trials, seed=args.seed)
    F = ops.LV @ U
    dvol = max((float(np.abs(discrete.delta1_vol(cx, F[:, r])).max()) for r in range(U.shape[1])),
               default=0.0)
    ok = rep.margin >= -args.tol
    out = {"seed": args.seed, "stability": rep.to_json(), "tol": args.tol, "pass": ok,
           "delta1_vol_max": dvol, "complex": {"edges": len(cx.edges), "junctions": len(cx.junctions),
                                               "cells": cx.size}}
    _write(args.out, _dump(out))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_volumes(args) -> int:
    part = _load_partition(args.partition)
    est = estimate_volumes(part, sample_count=args.samples, seed=args.seed, radius=args.radius)
    _write(args.out, _dump({"seed": args.seed, "volumes": est.to_json()}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# rendering

def planar_picture(part: PartitionSpec, plane=None) -> tuple:
    """Euclidean picture (R or G partition, disc mask radius or None) used for drawing.

    S is drawn by stereographic projection from the north pole, H in the
    Poincare ball.  n = 3 pictures are further cut by ``plane``.
    """
    kind, n = part.space.kind, part.space.n
    if n not in (2, 3):
        raise UsageError(f"rendering supports n = 2 (or n = 3 with --plane), got n = {n}", "n")
    if n == 3 and plane is None:
        raise UsageError("n = 3 rendering needs --plane", "plane")
    disc = None
    if kind in ("R", "G"):
        pic = part
    else:
        C, K = part.C, part.K
        if kind == "H":
            C, K = params_S_from_H(C, K)
            C = C.copy()
            C[:, -1] *= -1.0            # south-pole projection: the Poincare ball
            disc = 1.0
        cR, kR, kS = params_R_from_S(C, K)
        pic = make_partition(Space("R", n), cR, kR, kS)
    return pic, disc


def _pair_quadratic(pic: PartitionSpec, i, j, x0, E):
    """Coefficients (a, b, d) of score_i - score_j = a|y|^2 + 2<b,y> + d on x0 + E y."""
    ci, cj = pic.cells[i], pic.cells[j]
    if pic.space.kind == "G":
        c, k = ci.c - cj.c, ci.k - cj.k
        return 0.0, 0.5 * E.T @ c, float(c @ x0 + k)
    a = ci.k - cj.k
    c = ci.c - cj.c
    b = E.T @ (c + a * x0)
    d = a * x0 @ x0 + 2 * c @ x0 + 2 * (ci.kS - cj.kS) - a
    return a, b, d


def render_polylines(part: PartitionSpec, plane=None, extent: float = 3.0, samples: int = 2048):
    """Interface pieces as polylines in the picture plane: list of ((i, j), (m, 2) array)."""
    pic, disc = planar_picture(part, plane)
    n = pic.space.n
    if n == 2:
        x0, E = np.zeros(2), np.eye(2)
    else:
        nv = np.asarray(plane[:3], dtype=float)
        if np.linalg.norm(nv) < 1e-12:
            raise UsageError("plane normal must be nonzero", "plane")
        nv = nv / np.linalg.norm(nv)
        x0 = nv * float(plane[3])
        from scipy.linalg import null_space
        E = null_space(nv[None])
    limit = extent if disc is None else min(extent, disc)
    out = []
    for i in range(pic.q):
        for j in range(i + 1, pic.q):
            a, b, d = _pair_quadratic(pic, i, j, x0, E)
            if abs(a) > 1e-14:
                ctr = -b / a
                r2 = b @ b / a ** 2 - d / a
                if r2 <= 0:
                    continue
                t = np.linspace(0, 2 * np.pi, samples + 1)
                Y = ctr + np.sqrt(r2) * np.stack([np.cos(t), np.sin(t)], 1)
            else:
                bn = np.linalg.norm(b)
                if bn < 1e-14:
                    continue
                u = b / bn
                foot = -0.5 * d / bn * u
                t = np.linspace(-1, 1, samples + 1) * (limit + np.linalg.norm(foot))
                Y = foot + t[:, None] * np.array([-u[1], u[0]])
            X = x0 + Y @ E.T
            s = scores(pic, X)
            others = np.delete(s, [i, j], axis=1)
            top = np.maximum(s[:, i], s[:, j])
            mask = (others.min(axis=1) > top if others.shape[1] else np.ones(len(Y), bool))
            mask &= np.linalg.norm(Y, axis=1) <= limit
            # split into runs
            idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
            for lo, hi in zip(idx[::2], idx[1::2]):
                if hi - lo >= 2:
                    out.append(((i, j), Y[lo:hi]))
    if not out:
        raise UsageError("nothing to render: no interface inside the drawing window", "partition")
    return out, disc, limit


def _svg(lines, disc, limit) -> str:
    size = 600
    sc = size / (2.2 * limit)
    tr = lambda p: (size / 2 + sc * p[0], size / 2 - sc * p[1])
    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if disc is not None:
        parts.append(f'<circle cx="{size / 2:.3f}" cy="{size / 2:.3f}" r="{sc * disc:.3f}" '
                     'fill="none" stroke="#999" stroke-dasharray="4 3"/>')
    for (i, j), Y in lines:
        pts = " ".join("%.3f,%.3f" % tr(p) for p in Y)
        parts.append(f'<polyline data-pair="{i},{j}" points="{pts}" fill="none" stroke="black" '
                     'stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _csv(lines) -> str:
    rows = ["i,j,piece,x,y"]
    for piece, ((i, j), Y) in enumerate(lines):
        rows += ["%d,%d,%d,%.12g,%.12g" % (i, j, piece, p[0], p[1]) for p in Y]
    return "\n".join(rows) + "\n"


def cmd_render(args) -> int:
    part = _load_partition(args.partition)
    plane = None
    if args.plane:
        try:
            plane = [float(v) for v in args.plane.split(",")]
        except ValueError as exc:
            raise UsageError("--plane expects four comma-separated numbers a,b,c,d", "plane") from exc
        if len(plane) != 4:
            raise UsageError("--plane expects four comma-separated numbers a,b,c,d", "plane")
    lines, disc, limit = render_polylines(part, plane, args.extent, args.samples)
    Path(args.svg).write_text(_svg(lines, disc, limit), encoding="utf-8", newline="\n")
    Path(args.csv).write_text(_csv(lines), encoding="utf-8", newline="\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, partition=True):
        sp.add_argument("--seed", type=_seed, default=0, help="64-bit seed (default 0)")
        sp.add_argument("--out", default="-", help="report path (default stdout)")
        if partition:
            sp.add_argument("partition", help="partition JSON file")

    c = sub.add_parser("construct", help="write a partition JSON")
    common(c, partition=False)
    c.add_argument("--space", choices=("S", "R", "H", "G"), default="S")
    c.add_argument("--n", type=int, default=2)
    c.add_argument("--q", type=int, default=3)
    c.add_argument("--family", choices=FAMILIES, default="standard")
    c.add_argument("--mobius", help="Mobius map JSON applied before the pull-back")
    c.add_argument("--rho", type=_positive(float), default=1.0, help="geodesic ball radius")
    c.set_defaults(func=cmd_construct)

    f = sub.add_parser("flatness", help="solve for a flatness certificate")
    common(f)
    f.set_defaults(func=cmd_flatness)

    v = sub.add_parser("potential", help="certificate potential")
    common(v)
    v.add_argument("--certificate")
    v.set_defaults(func=cmd_potential)

    r = sub.add_parser("verify", help="stationarity, three-tensor and potential identities")
    common(r)
    r.add_argument("--potential")
    r.add_argument("--certificate")
    r.add_argument("--samples", type=_positive(int), default=16)
    r.set_defaults(func=cmd_verify)

    s = sub.add_parser("stability", help="discrete stability margin of an n = 2 partition")
    common(s)
    s.add_argument("--potential")
    s.add_argument("--certificate")
    s.add_argument("--mode", choices=discrete.MARGIN_MODES, default="ImageOfLV")
    s.add_argument("--resolution", type=_positive(float), default=25.0, help="cells per unit length")
    s.add_argument("--cells-per-edge", type=int, default=None)
    s.add_argument("--radius", type=_positive(float), default=discrete.GAUSSIAN_RADIUS)
    s.add_argument("--tol", type=_positive(float), default=1e-4)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--jacobi-override", type=float, default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_stability)

    o = sub.add_parser("volumes", help="Monte Carlo cell volumes")
    common(o)
    o.add_argument("--samples", type=int, default=10 ** 5)
    o.add_argument("--radius", type=_positive(float), default=8.0)
    o.set_defaults(func=cmd_volumes)

    d = sub.add_parser("render", help="SVG and CSV of the interfaces")
    d.add_argument("partition")
    d.add_argument("--svg", required=True)
    d.add_argument("--csv", required=True)
    d.add_argument("--plane", help="cutting plane a,b,c,d (normal and offset) for n = 3")
    d.add_argument("--extent", type=_positive(float), default=3.0)
    d.add_argument("--samples", type=_positive(int), default=2048)
    d.add_argument("--seed", type=_seed, default=0)
    d.set_defaults(func=cmd_render)
    return p


def _diagnostic(exc: Exception) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "field", None):
        rec["field"] = exc.field
    return json.dumps(rec, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ArtifactError, ValueError, KeyError, TypeError) as exc:
        print(_diagnostic(exc), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
