"""Command-line driver.

Subcommands read and write JSON meshes (see
:meth:`HierarchicalTMesh.to_json`) and print a JSON report that embeds the
run configuration.  Exit codes: 0 success, 1 user error (bad paths, bad
input, bad flags), 2 internal consistency failure (a check or cross-check
did not hold).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .basis import ConstructionError, PhiError, build_basis, check_basis
from .cvr import CvrConsistencyError, build_cvr, dim_space, working_mesh
from .fitting import FunctionData, fit_adaptive, franke, grid_points, read_obj, sample_surface, write_obj
from .mesh import HierarchicalTMesh, MeshError, simplify
from .oracle import OracleSizeError, dim_bruteforce, random_hierarchical_mesh
from .tstructure import PropagationConflict

log = logging.getLogger("cvrspline")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    """Bad input or configuration."""


class ConsistencyFailure(Exception):
    """A self-check did not hold."""


@dataclass
class RunConfig:
    subcommand: str
    mesh: str | None = None
    input: str | None = None
    output: str | None = None
    tol: float = 1e-3
    max_iter: int = 8
    level0: tuple[int, int] = (4, 4)
    seed: int = 0
    hbc: bool = True
    oracle: bool = False
    simplify: bool = True
    check: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.tol <= 0:
            raise UserError("--tol must be positive")
        if self.max_iter < 1:
            raise UserError("--max-iter must be at least 1")
        if min(self.level0) < 1:
            raise UserError("--level0 entries must be positive")
        if self.seed < 0:
            raise UserError("--seed must be non-negative")
        for p in (self.mesh, self.input):
            if p is not None and not Path(p).is_file():
                raise UserError(f"no such file: {p}")


def _load_mesh(path: str | None) -> HierarchicalTMesh:
    if path is None:
        raise UserError("--mesh is required")
    try:
        return HierarchicalTMesh.from_json(Path(path).read_text())
    except (json.JSONDecodeError, KeyError, TypeError, MeshError, ValueError) as exc:
        raise UserError(f"cannot read mesh {path}: {exc}") from exc


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


def _mesh_info(mesh: HierarchicalTMesh) -> dict:
    info = mesh.summary()
    return {k: info[k] for k in sorted(info) if isinstance(info[k], (int, float, str, bool))}


# ------------------------------------------------------------------ commands
def cmd_random_mesh(cfg: RunConfig) -> dict:
    ex = cfg.extra
    mesh = random_hierarchical_mesh(cfg.seed, ex["level0_max"], ex["max_level"], ex["split_prob"])
    _write(cfg.output, mesh.to_json())
    return {"mesh": _mesh_info(mesh)}


def cmd_dim(cfg: RunConfig) -> dict:
    mesh = _load_mesh(cfg.mesh)
    d = dim_space(mesh, cfg.hbc, cfg.simplify)
    out = {"mesh": _mesh_info(mesh), "dim": d}
    if cfg.oracle:
        o = dim_bruteforce(mesh, cfg.hbc)
        out["dim_oracle"] = o
        out["status"] = "PASS" if o == d else "FAIL"
        print(f"dim={d} oracle={o} {out['status']}", file=sys.stderr)
        if o != d:
            raise ConsistencyFailure(json.dumps(out))
    return out


def cmd_cvr(cfg: RunConfig) -> dict:
    mesh = _load_mesh(cfg.mesh)
    work = working_mesh(mesh, cfg.hbc, cfg.simplify)
    g = build_cvr(work)
    graph = {
        "gcells": [
            {"id": c.id, "kind": c.kind, "cells": list(c.cells), "centre": list(c.centre), "level": c.level}
            for c in g.gcells
        ],
        "crossing_vertices": [work.real_point(p) for p in g.crossing_vertices],
        "segments": [[work.real_point(a), work.real_point(b)] for a, b in g.segments],
    }
    _write(cfg.output, json.dumps(graph, indent=1))
    return {"mesh": _mesh_info(mesh), "dim": len(g), "counts": dict(g.counts)}


def cmd_basis(cfg: RunConfig) -> dict:
    mesh = _load_mesh(cfg.mesh)
    basis = build_basis(mesh, hbc=cfg.hbc, simplified=cfg.simplify)
    if cfg.output:
        funcs = [{"gcell": bf.gcell, **bf.spline.to_dict()} for bf in basis.functions]
        _write(cfg.output, json.dumps({"mesh": json.loads(mesh.to_json()), "functions": funcs}))
    out = {"mesh": _mesh_info(mesh), "dim": len(basis)}
    if cfg.check:
        rep = check_basis(basis, oracle=cfg.oracle)
        out["check"] = rep
        for name, item in rep.items():
            if isinstance(item, dict):
                print(f"{name}: {'PASS' if item['ok'] else 'FAIL'}", file=sys.stderr)
        if not rep["ok"]:
            raise ConsistencyFailure(json.dumps(out))
    return out


def cmd_simplify(cfg: RunConfig) -> dict:
    mesh = _load_mesh(cfg.mesh)
    trace: list = []
    simple = simplify(mesh, trace)
    _write(cfg.output, simple.to_json())
    out = {"mesh": _mesh_info(mesh), "simplified": _mesh_info(simple), "removed_edges": len(trace)}
    if cfg.oracle:
        a, b = dim_bruteforce(mesh, cfg.hbc), dim_bruteforce(simple, cfg.hbc)
        out.update(dim_oracle=a, dim_oracle_simplified=b)
        if a != b:
            raise ConsistencyFailure(json.dumps(out))
    return out


def cmd_fit(cfg: RunConfig) -> dict:
    if cfg.input:
        try:
            data = read_obj(cfg.input)
        except (OSError, ValueError) as exc:
            raise UserError(f"cannot read {cfg.input}: {exc}") from exc
    else:
        n = cfg.extra.get("franke", 100)
        data = FunctionData(lambda x, y: np.column_stack([x, y, franke(x, y)]), grid_points(n))
    model = fit_adaptive(data, tol=cfg.tol, max_iter=cfg.max_iter, level0=cfg.level0)
    out = model.report()
    out["mesh"] = _mesh_info(model.mesh)
    _write(cfg.output, json.dumps(out, indent=1))
    if cfg.extra.get("surface"):
        V, T = sample_surface(model, cfg.extra.get("res", 50))
        write_obj(cfg.extra["surface"], V, T)
    if cfg.extra.get("mesh_out"):
        Path(cfg.extra["mesh_out"]).write_text(model.mesh.to_json())
    return out


COMMANDS = {
    "random-mesh": cmd_random_mesh,
    "dim": cmd_dim,
    "cvr": cmd_cvr,
    "basis": cmd_basis,
    "simplify": cmd_simplify,
    "fit": cmd_fit,
}


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one configuration; returns (exit code, report)."""
    report: dict = {"config": asdict(cfg), "version": __version__}
    t0 = time.perf_counter()
    try:
        cfg.validate()
        report["result"] = COMMANDS[cfg.subcommand](cfg)
        code = EXIT_OK
    except (UserError, MeshError, OracleSizeError, FileNotFoundError) as exc:
        report["error"] = str(exc)
        code = EXIT_USER
    except (ConsistencyFailure, CvrConsistencyError, ConstructionError, PhiError, PropagationConflict) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_INTERNAL
    report["seconds"] = round(time.perf_counter() - t0, 6)
    report["status"] = code
    return code, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvrspline", description="C1 biquadratic splines on hierarchical T-meshes")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def mesh_cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--mesh", required=True, help="mesh JSON file")
        s.add_argument("--out", dest="output", help="artifact output path")
        s.add_argument("--no-hbc", dest="hbc", action="store_false", help="space without boundary conditions")
        s.add_argument("--no-simplify", dest="simplify", action="store_false")
        s.add_argument("--oracle", action="store_true", help="cross-check with the brute-force oracle")
        return s

    mesh_cmd("dim", "dimension as the CVR g-cell count")
    mesh_cmd("cvr", "export the CVR graph")
    b = mesh_cmd("basis", "build the basis")
    b.add_argument("--check", action="store_true", help="C1, phi and partition-of-unity report")
    mesh_cmd("simplify", "remove removable edges")

    r = sub.add_parser("random-mesh", help="seeded random hierarchical mesh")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--level0-max", type=int, default=5)
    r.add_argument("--max-level", type=int, default=3)
    r.add_argument("--split-prob", type=float, default=0.4)
    r.add_argument("--out", dest="output")

    f = sub.add_parser("fit", help="adaptive surface fitting")
    f.add_argument("--in", dest="input", help="triangulated surface (OBJ); default: Franke samples")
    f.add_argument("--franke", type=int, default=100, help="grid size of the default Franke samples")
    f.add_argument("--tol", type=float, default=1e-3)
    f.add_argument("--max-iter", type=int, default=8)
    f.add_argument("--level0", type=int, nargs=2, default=(4, 4), metavar=("NX", "NY"))
    f.add_argument("--out", dest="output", help="JSON report path")
    f.add_argument("--surface", help="sampled surface OBJ path")
    f.add_argument("--res", type=int, default=50)
    f.add_argument("--mesh-out", help="final T-mesh JSON path")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    base = {f: getattr(ns, f) for f in RunConfig.__dataclass_fields__ if f != "extra" and hasattr(ns, f)}
    if "level0" in base:
        base["level0"] = tuple(base["level0"])
    extra = {}
    for k in ("level0_max", "max_level", "split_prob", "franke", "surface", "res", "mesh_out"):
        if hasattr(ns, k):
            extra[k] = getattr(ns, k)
    return RunConfig(extra=extra, **base)


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("CVRSPLINE_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)
    code, report = run(config_from_args(ns))
    print(json.dumps(report, indent=1, default=str))
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
