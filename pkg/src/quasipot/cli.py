"""Command-line interface and document formats.

System documents are YAML::

    name: maier_stein
    dimension: 2
    variables: [x1, x2]          # optional, default x1..xn
    parameters: {mu: 1, gamma: 10}
    drift:
      - x1 - x1^3 - gamma*x1*x2^2
      - -mu*(1 + x1^2)*x2
    fixed_points: [[-1, 0]]      # optional Newton guesses
    box: [[-2, 2], [-2, 2]]      # optional, default [-2, 2]^n
    decompose: {max_iterations: 5}
    paths: {origin: [-1, 0], endpoints: [[-0.4, 0]]}

Result documents are JSON; coefficients are written with full precision
so that reading a result back reproduces ``U`` exactly.

Exit codes: 0 certified, 1 unexpected error, 2 bad input or usage,
3 infeasible program, 4 uncertified or numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path as FsPath

import numpy as np
import yaml

from .basis import BasisError
from .decompose import DecomposeConfig, DecompositionError, DecompositionResult, decompose
from .linear_oracle import (
    gradient_matrix,
    gramian_potential,
    linear_drift_matrix,
    median_times_monotone,
    riccati_residual,
    run_bench,
    verify_linear_decomposition,
    write_bench_csv,
)
from .paths import PathError, quasi_potential_bounds, refine_fixed_point
from .poly import DimensionError, Monomial, Polynomial, PolynomialSyntaxError, VectorField, variable_names

log = logging.getLogger("quasipot")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_UNCERTIFIED = 0, 1, 2, 3, 4
RESULT_FORMAT = "quasipot-result/1"


class SpecError(ValueError):
    """Invalid system or result document; the message names the field and line."""


@dataclass
class SystemSpec:
    name: str
    dimension: int
    drift: list[str]
    variables: list[str]
    parameters: dict = field(default_factory=dict)
    fixed_points: list[list[float]] = field(default_factory=list)
    box: list[tuple[float, float]] | None = None
    decompose: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    source: str = "<string>"

    def vector_field(self) -> VectorField:
        return VectorField.parse(self.drift, self.variables, self.parameters)

    def config(self, **overrides) -> DecomposeConfig:
        opts = dict(self.decompose)
        opts.update({k: v for k, v in overrides.items() if v is not None})
        if self.box is not None and "box" not in opts:
            opts["box"] = self.box
        return DecomposeConfig(**opts)


def _lines(node) -> dict:
    """Line numbers (1-based) of the top-level keys and sequence items."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[k.value] = k.start_mark.line + 1
            if isinstance(v, yaml.SequenceNode):
                for i, item in enumerate(v.value):
                    out[f"{k.value}[{i}]"] = item.start_mark.line + 1
    return out


def parse_system(text: str, source: str = "<string>") -> SystemSpec:
    """Validate a YAML system document."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise SpecError(f"{source}: expected a mapping at the top level")
    lines = _lines(node)

    def fail(key, msg):
        line = lines.get(key, lines.get(key.split("[")[0]))
        where = f"{source}:{line}" if line else source
        raise SpecError(f"{where}: field '{key}': {msg}")

    allowed = {f.name for f in fields(SystemSpec)} - {"source"}
    for key in doc:
        if key not in allowed:
            fail(str(key), "unknown field")
    for key in ("dimension", "drift"):
        if key not in doc:
            raise SpecError(f"{source}: missing required field '{key}'")
    n = doc["dimension"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        fail("dimension", f"expected a positive integer, got {n!r}")
    drift = doc["drift"]
    if not isinstance(drift, list):
        fail("drift", "expected a list of polynomial strings")
    if len(drift) != n:
        fail("drift", f"dimension is {n} but {len(drift)} drift components were given")
    variables = doc.get("variables") or variable_names(n)
    if not isinstance(variables, list) or len(variables) != n or not all(isinstance(v, str) for v in variables):
        fail("variables", f"expected a list of {n} names")
    params = doc.get("parameters") or {}
    if not isinstance(params, dict) or not all(isinstance(v, (int, float)) for v in params.values()):
        fail("parameters", "expected a mapping from names to numbers")
    texts = []
    for i, t in enumerate(drift):
        if isinstance(t, (int, float)) and not isinstance(t, bool):
            t = repr(float(t))
        if not isinstance(t, str):
            fail(f"drift[{i}]", "expected a polynomial string")
        try:
            Polynomial.parse(t, variables=variables, nvars=n, parameters=params)
        except (PolynomialSyntaxError, DimensionError) as exc:
            fail(f"drift[{i}]", str(exc))
        texts.append(t)
    fps = doc.get("fixed_points") or []
    for i, p in enumerate(fps):
        if not isinstance(p, list) or len(p) != n:
            fail(f"fixed_points[{i}]", f"expected a list of {n} numbers")
    box = doc.get("box")
    if box is not None:
        if not isinstance(box, list) or len(box) != n or any(
                not isinstance(b, list) or len(b) != 2 or not b[0] < b[1] for b in box):
            fail("box", f"expected {n} intervals [lo, hi] with lo < hi")
        box = [(float(a), float(b)) for a, b in box]
    dec = doc.get("decompose") or {}
    cfg_fields = {f.name for f in fields(DecomposeConfig)}
    if not isinstance(dec, dict):
        fail("decompose", "expected a mapping")
    for k in dec:
        if k not in cfg_fields:
            fail("decompose", f"unknown option '{k}'")
    paths = doc.get("paths") or {}
    if not isinstance(paths, dict):
        fail("paths", "expected a mapping")
    return SystemSpec(
        name=str(doc.get("name", FsPath(source).stem)), dimension=n, drift=texts,
        variables=list(variables), parameters=dict(params),
        fixed_points=[[float(v) for v in p] for p in fps], box=box, decompose=dict(dec),
        paths=dict(paths), source=source,
    )


def load_system(path: str) -> SystemSpec:
    """Read a system document from a file or a bundled name such as ``quartic_2d``."""
    p = FsPath(path)
    if not p.exists():
        bundled = resources.files("quasipot") / "systems" / f"{path}.yaml"
        if bundled.is_file():
            return parse_system(bundled.read_text(), f"{path}.yaml")
        raise SpecError(f"no such system document: {path}")
    return parse_system(p.read_text(), str(p))


def bundled_systems() -> list[str]:
    root = resources.files("quasipot") / "systems"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


# result documents

def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def coefficient_table(p: Polynomial) -> list[dict]:
    return [{"exponents": list(m), "coefficient": c} for m, c in p.items()]


def polynomial_from_table(rows, n: int) -> Polynomial:
    return Polynomial({Monomial(r["exponents"]): float(r["coefficient"]) for r in rows}, n)


def result_document(spec: SystemSpec, res: DecompositionResult, x_ref) -> dict:
    names = spec.variables
    return {
        "format": RESULT_FORMAT,
        "system": spec.name,
        "variables": names,
        "drift": res.f.to_text(names),
        "status": res.status,
        "certified": res.certified,
        "potential": {
            "text": res.U.to_text(names, exact=False),
            "coefficients": coefficient_table(res.U),
            "normalization_point": [float(v) for v in x_ref],
            "offset": _num(res.offset),
        },
        "f_U": res.f_U.to_text(names, exact=False),
        "f_U_coefficients": [coefficient_table(p) for p in res.f_U],
        "defect_measure": _num(res.defect_measure),
        "box": [list(b) for b in res.box],
        "basis": res.basis.describe(names),
        "epsilon": {k: _num(v) for k, v in res.epsilon.items()},
        "iterations": [
            {"stage": r.stage, "alpha": _num(r.alpha), "defect_measure": _num(r.defect_measure),
             "eq_residual": _num(r.eq_residual), "min_eig": _num(r.min_eig),
             "solve_time": _num(r.solve_time), "certified": r.certified}
            for r in res.iterations
        ],
        "certificates": {
            name: {"residual": _num(rep.residual), "min_eig": _num(rep.min_eig),
                   "scale": _num(rep.scale), "ok": rep.ok()}
            for name, rep in res.reports.items()
        },
    }


@dataclass
class LoadedResult:
    """The parts of a result document needed for grids and paths."""

    f: VectorField
    U: Polynomial
    f_U: VectorField
    variables: list[str]
    box: list[tuple[float, float]]
    certified: bool


def read_result(doc: dict) -> LoadedResult:
    if doc.get("format") != RESULT_FORMAT:
        raise SpecError(f"not a result document (format {doc.get('format')!r})")
    names = doc["variables"]
    n = len(names)
    f = VectorField.parse(doc["drift"], names)
    U = polynomial_from_table(doc["potential"]["coefficients"], n)
    return LoadedResult(f=f, U=U, f_U=f + U.gradient(), variables=names,
                        box=[tuple(b) for b in doc["box"]], certified=bool(doc["certified"]))


def atomic_write(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file; ``None`` or ``-`` means stdout."""
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    target = FsPath(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def grid_csv(U: Polynomial, box, resolution: int, names) -> str:
    """``U`` on a tensor grid; the last variable varies fastest."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    axes = [np.array([0.5 * (lo + hi)]) if resolution == 1 else np.linspace(lo, hi, resolution)
            for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))
    vals = U(mesh)
    buf = io.StringIO()
    buf.write(",".join(list(names) + ["U"]) + "\n")
    for x, u in zip(mesh, np.atleast_1d(vals)):
        buf.write(",".join("%.10g" % v for v in list(x) + [u]) + "\n")
    return buf.getvalue()


# commands

def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _box_arg(text: str) -> tuple[float, float]:
    v = _vector(text)
    if len(v) != 2 or not v[0] < v[1]:
        raise argparse.ArgumentTypeError(f"expected lo,hi with lo < hi, got {text!r}")
    return (v[0], v[1])


def _run_decompose(spec: SystemSpec, args) -> tuple[DecompositionResult, np.ndarray]:
    overrides = {"max_iterations": args.iterations, "solver_tol": args.tol,
                 "grid_resolution": getattr(args, "resolution", None)}
    if args.box:
        overrides["box"] = [args.box] * spec.dimension
    cfg = spec.config(**overrides)
    res = decompose(spec.vector_field(), cfg)
    x_ref = np.zeros(spec.dimension) if cfg.normalization_point is None else np.asarray(cfg.normalization_point)
    return res, x_ref


def cmd_decompose(args) -> int:
    spec = load_system(args.system)
    res, x_ref = _run_decompose(spec, args)
    doc = result_document(spec, res, x_ref)
    out = args.output
    if out is None and args.outdir:
        out = str(FsPath(args.outdir) / f"{spec.name}.json")
    atomic_write(out, json.dumps(doc, indent=2) + "\n")
    if not res.certified:
        log.warning("%s: decomposition is not certified", spec.name)
        return EXIT_UNCERTIFIED
    log.info("%s: certified, U = %s", spec.name, res.U.to_text(spec.variables, exact=False))
    return EXIT_OK


def _load_any(path: str, args) -> tuple[LoadedResult, SystemSpec | None]:
    """A result document, or a system document decomposed on the fly."""
    p = FsPath(path)
    if p.suffix == ".json" and p.exists():
        return read_result(json.loads(p.read_text())), None
    spec = load_system(path)
    res, _ = _run_decompose(spec, args)
    return LoadedResult(f=res.f, U=res.U, f_U=res.f_U, variables=spec.variables, box=res.box,
                        certified=res.certified), spec


def cmd_grid(args) -> int:
    loaded, _ = _load_any(args.input, args)
    box = [args.box] * len(loaded.variables) if args.box else loaded.box
    atomic_write(args.output, grid_csv(loaded.U, box, args.resolution, loaded.variables))
    return EXIT_OK


def cmd_paths(args) -> int:
    loaded, spec = _load_any(args.input, args)
    if spec is None and args.system:
        spec = load_system(args.system)
    n = len(loaded.variables)
    path_opts = spec.paths if spec else {}
    origin = args.origin or path_opts.get("origin")
    endpoints = args.endpoint or path_opts.get("endpoints")
    if origin is None or not endpoints:
        log.error("paths needs --origin and at least one --endpoint")
        return EXIT_USAGE
    if len(origin) != n or any(len(e) != n for e in endpoints):
        log.error("origin and endpoints must have %d coordinates", n)
        return EXIT_USAGE
    x_o = refine_fixed_point(loaded.f, origin)
    if x_o.kind != "stable":
        log.warning("origin %s is a %s fixed point", x_o.x, x_o.kind)
    outdir = FsPath(args.outdir)
    reports, code = [], EXIT_OK
    for k, x_e in enumerate(endpoints):
        x_e = np.asarray(x_e, dtype=float)
        if any(not lo <= v <= hi for v, (lo, hi) in zip(x_e, loaded.box)):
            log.warning("endpoint %s lies outside the box", x_e.tolist())
        try:
            rep = quasi_potential_bounds(loaded, x_o, x_e, N=args.N)
        except PathError as exc:
            log.error("endpoint %s: %s", x_e.tolist(), exc)
            reports.append({"x_e": x_e.tolist(), "error": str(exc)})
            code = EXIT_UNCERTIFIED
            continue
        for label, path in (("predicted", rep.predicted), ("oracle", rep.oracle_path)):
            buf = io.StringIO()
            path.to_csv(buf, loaded.variables)
            atomic_write(str(outdir / f"{label}_{k}.csv"), buf.getvalue())
        entry = rep.as_dict()
        entry["sandwich_ok"] = rep.sandwich_ok()
        reports.append(entry)
    doc = {"origin": x_o.x.tolist(), "origin_kind": x_o.kind, "convention": "sigma-free", "bounds": reports}
    atomic_write(str(outdir / "bounds.json"), json.dumps(doc, indent=2) + "\n")
    return code


def _int_range(text: str) -> list[int]:
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def cmd_bench(args) -> int:
    ns = _int_range(args.n)
    seeds = list(range(args.seed, args.seed + args.seeds))
    cfg = DecomposeConfig(max_iterations=args.iterations or 5)
    rows = run_bench(ns, seeds, cfg)
    buf = io.StringIO()
    write_bench_csv(rows, buf)
    atomic_write(args.output, buf.getvalue())
    monotone, medians = median_times_monotone(rows)
    certified = sum(r.certified for r in rows)
    log.info("certified %d/%d; median times %s; monotone in n: %s", certified, len(rows),
             ", ".join(f"n={n}: {t:.3g}s" for n, t in medians.items()), monotone)
    return EXIT_OK if certified == len(rows) else EXIT_UNCERTIFIED


def cmd_verify_linear(args) -> int:
    spec = load_system(args.system)
    f = spec.vector_field()
    A = linear_drift_matrix(f)
    exact = gramian_potential(A)
    res, _ = _run_decompose(spec, args)
    A_g = gradient_matrix(res.U)
    rep = verify_linear_decomposition(A, A_g)
    doc = {
        "system": spec.name,
        "certified": res.certified,
        "A_g": A_g.tolist(),
        "A_g_gramian": exact.A_g.tolist(),
        "relative_error": float(np.linalg.norm(A_g - exact.A_g) / np.linalg.norm(exact.A_g)),
        "riccati_residual": riccati_residual(-A_g, A),
        "symmetry": rep.symmetry,
        "max_real_eig_Ac": rep.max_real_eig_Ac,
        "antisymmetry": rep.antisymmetry,
    }
    atomic_write(args.output, json.dumps(doc, indent=2) + "\n")
    ok = res.certified and doc["relative_error"] < 1e-2 and doc["riccati_residual"] < 1e-3
    return EXIT_OK if ok else EXIT_UNCERTIFIED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="more log output (repeat for debug)")
    p = argparse.ArgumentParser(prog="quasipot", description="Polynomial quasi-potential landscapes.",
                                parents=[common])
    p.set_defaults(verbose=0)
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--iterations", type=int, help="maximum refinement iterations")
        sp.add_argument("--tol", type=float, help="SDP solver tolerance")
        sp.add_argument("--box", type=_box_arg, help="box lo,hi applied to every variable")

    d = sub.add_parser("decompose", parents=[common], help="compute a sub-orthogonal decomposition")
    d.add_argument("system", help="system document, or the name of a bundled system")
    d.add_argument("-o", "--output", help="result file (default stdout)")
    d.add_argument("--outdir", help="write <name>.json into this directory")
    d.add_argument("--resolution", type=int, help="grid resolution for the defect measure")
    solver_flags(d)
    d.set_defaults(func=cmd_decompose)

    g = sub.add_parser("grid", parents=[common], help="tabulate U on a tensor grid")
    g.add_argument("input", help="result document (.json) or system document")
    g.add_argument("--resolution", type=int, default=21)
    g.add_argument("-o", "--output")
    solver_flags(g)
    g.set_defaults(func=cmd_grid)

    pa = sub.add_parser("paths", parents=[common], help="predicted and oracle minimum-action paths with bounds")
    pa.add_argument("input", help="result document (.json) or system document")
    pa.add_argument("--system", help="system document supplying path defaults")
    pa.add_argument("--origin", type=_vector, help="fixed-point guess x1,x2,...")
    pa.add_argument("--endpoint", type=_vector, action="append", help="endpoint (repeatable)")
    pa.add_argument("--N", type=int, default=100, help="interior points of the oracle path")
    pa.add_argument("--outdir", default=".")
    solver_flags(pa)
    pa.set_defaults(func=cmd_paths)

    b = sub.add_parser("bench", parents=[common], help="random linear systems against the Gramian oracle")
    b.add_argument("--n", default="2:4", help="dimensions, e.g. 2:8 or 2,4,6")
    b.add_argument("--seeds", type=int, default=3, help="seeds per dimension")
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--iterations", type=int)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify-linear", parents=[common], help="compare a linear system with its Gramian potential")
    v.add_argument("system")
    v.add_argument("-o", "--output")
    solver_flags(v)
    v.set_defaults(func=cmd_verify_linear)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SpecError, PolynomialSyntaxError, DimensionError, argparse.ArgumentTypeError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (BasisError, DecompositionError) as exc:
        log.error("%s", exc)
        status = getattr(exc, "status", "infeasible")
        return EXIT_INFEASIBLE if status in ("infeasible", "unbounded") else EXIT_UNCERTIFIED
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
