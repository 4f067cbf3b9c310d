"""JSON scenario files, coordinate expressions and CSV field I/O."""
from __future__ import annotations

import ast
import csv
import json
import math
import operator
from pathlib import Path

import numpy as np

from .energy_laws import DomainError, law_from_config
from .evolution import Scenario, ScenarioError, TimeTable
from .grid import (
    BoundaryData,
    BoundaryPartition,
    Mesh,
    SourceData,
    build_interval_mesh,
    build_rect_mesh,
)
from .prox_step import SolverConfig, StepProblem

FLOAT_FORMAT = "%.17g"


# -- expressions -----------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "max": np.maximum}
_CONSTS = {"pi": math.pi, "e": math.e}


def evaluate_expression(text, coords: dict) -> np.ndarray:
    """Evaluate a coordinate expression such as ``"max(0, 1 - 4*(x-0.5)^2)"``.

    ``coords`` maps variable names (x, y) to arrays; the result is broadcast
    to their common shape.
    """
    shape = np.broadcast(*coords.values()).shape if coords else ()
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return np.full(shape, float(text))
    if not isinstance(text, str):
        raise DomainError(f"expected a number or expression, got {text!r}")
    try:
        # "^" means power in configs; rewriting it keeps Python's precedence for powers
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise DomainError(f"cannot parse expression {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name):
            if node.id in coords:
                return coords[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise DomainError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            args = [ev(a) for a in node.args]
            if node.func.id == "max":
                if len(args) < 2:
                    raise DomainError("max needs at least two arguments")
                out = args[0]
                for a in args[1:]:
                    out = np.maximum(out, a)
                return out
            if len(args) != 1:
                raise DomainError(f"{node.func.id} takes one argument")
            return _FUNCS[node.func.id](args[0])
        raise DomainError(f"unsupported syntax in expression {text!r}")

    with np.errstate(all="ignore"):
        value = np.broadcast_to(np.asarray(ev(tree), dtype=float), shape).copy()
    if not np.all(np.isfinite(value)):
        raise DomainError(f"expression {text!r} is not finite on the mesh")
    return value


# -- csv -------------------------------------------------------------------------

def write_csv(path, columns: dict) -> None:
    """Write equally long columns; floats get 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([FLOAT_FORMAT % v if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = np.array(vals, dtype=object)
    return out


def nodal_columns(mesh: Mesh) -> dict:
    names = ("x", "y")[: mesh.dim]
    return {n: mesh.points[:, j].astype(float) for j, n in enumerate(names)}


# -- locations -------------------------------------------------------------------

def _coords(points: np.ndarray) -> dict:
    names = ("x", "y")[: points.shape[1]]
    return {n: points[:, j] for j, n in enumerate(names)}


def cell_centres(mesh: Mesh) -> np.ndarray:
    return mesh.points[mesh.cells].mean(axis=1)


def facet_centres(mesh: Mesh) -> np.ndarray:
    return mesh.points[mesh.facets].mean(axis=1)


class _Reader:
    """Resolves config entries into arrays; errors carry the dotted field name."""

    def __init__(self, base_dir: Path, mesh: Mesh):
        self.base = base_dir
        self.mesh = mesh

    def _csv_column(self, name, spec, column, size):
        path = self.base / spec["csv"]
        if not path.exists():
            raise ScenarioError(name, f"file {path} does not exist")
        table = read_csv(path)
        if column not in table:
            raise ScenarioError(name, f"column {column!r} missing in {path}")
        col = np.asarray(table[column], dtype=float)
        if col.size != size:
            raise ScenarioError(name, f"{path} has {col.size} rows, expected {size}")
        return col

    def scalar(self, name, spec, where: np.ndarray, column="value"):
        if isinstance(spec, dict) and "csv" in spec:
            return self._csv_column(name, spec, spec.get("column", column), where.shape[0])
        try:
            return evaluate_expression(spec, _coords(where))
        except DomainError as exc:
            raise ScenarioError(name, str(exc)) from exc

    def pair(self, name, spec, where: np.ndarray, columns=None):
        """Two scalar fields: a single entry applies to both species.

        CSV sources default to columns ``<name>1`` and ``<name>2``.
        """
        if isinstance(spec, dict) and "csv" in spec:
            stem = name.rsplit(".", 1)[-1]
            cols = spec.get("columns", list(columns or (f"{stem}1", f"{stem}2")))
            return np.stack([self._csv_column(name, spec, c, where.shape[0]) for c in cols])
        if isinstance(spec, (list, tuple)):
            if len(spec) != 2:
                raise ScenarioError(name, "expected one entry per species")
            return np.stack([self.scalar(f"{name}[{k}]", spec[k], where) for k in range(2)])
        v = self.scalar(name, spec, where)
        return np.stack([v, v])

    def vector_pair(self, name, spec):
        """Per-species cell vectors: ``[[vx1(, vy1)], [vx2(, vy2)]]``."""
        mesh = self.mesh
        out = np.zeros((2, mesh.n_cells, mesh.dim))
        if spec is None:
            return out
        where = cell_centres(mesh)
        if not isinstance(spec, (list, tuple)) or len(spec) != 2:
            raise ScenarioError(name, "expected one component list per species")
        for k in range(2):
            comps = spec[k]
            if not isinstance(comps, (list, tuple)):
                comps = [comps]
            if len(comps) != mesh.dim:
                raise ScenarioError(f"{name}[{k}]", f"expected {mesh.dim} components")
            for j in range(mesh.dim):
                out[k, :, j] = self.scalar(f"{name}[{k}][{j}]", comps[j], where)
        return out


# -- sections --------------------------------------------------------------------

def _require(doc, key, where="config"):
    if key not in doc:
        raise ScenarioError(key if where == "config" else f"{where}.{key}", f"missing from {where}")
    return doc[key]


def build_mesh(spec: dict) -> Mesh:
    try:
        dim = int(spec.get("dim", 1))
        if dim == 1:
            a, b = spec.get("bounds", [0.0, 1.0])
            return build_interval_mesh(float(a), float(b), spec["cells"])
        if dim == 2:
            bounds = spec.get("bounds", [[0.0, 1.0], [0.0, 1.0]])
            nx, ny = spec["cells"]
            return build_rect_mesh(bounds, nx, ny)
    except KeyError as exc:
        raise ScenarioError(f"mesh.{exc.args[0]}", "missing") from exc
    except (TypeError, ValueError, DomainError) as exc:
        raise ScenarioError("mesh", str(exc)) from exc
    raise ScenarioError("mesh.dim", f"must be 1 or 2, got {spec.get('dim')}")


def build_partition(mesh: Mesh, spec) -> BoundaryPartition:
    if isinstance(spec, dict) and ("species1" in spec or "species2" in spec):
        tags = [spec.get("species1"), spec.get("species2")]
    elif isinstance(spec, (list, tuple)) and len(spec) == 2:
        tags = list(spec)
    elif isinstance(spec, dict):
        tags = [spec, spec]
    else:
        raise ScenarioError("boundaries", "expected side tags per species")
    try:
        return BoundaryPartition.from_sides(mesh, tags[0], tags[1])
    except (DomainError, AttributeError, TypeError) as exc:
        raise ScenarioError("boundaries", str(exc)) from exc


def build_boundary_data(reader: _Reader, spec: dict | None) -> BoundaryData:
    mesh = reader.mesh
    spec = spec or {}
    g = reader.pair("boundary_data.g", spec.get("g", 0.0), mesh.points)
    pi = reader.pair("boundary_data.pi", spec.get("pi", 0.0), facet_centres(mesh))
    return BoundaryData(g, pi)


def _source_value(reader: _Reader, name, spec) -> SourceData:
    f0 = reader.pair(f"{name}.f0", spec.get("f0", 0.0), reader.mesh.points)
    fbar = reader.vector_pair(f"{name}.fbar", spec.get("fbar"))
    return SourceData(f0, fbar)


def build_source(reader: _Reader, spec):
    if spec is None:
        return None
    if isinstance(spec, list):
        segs = []
        for i, seg in enumerate(spec):
            name = f"source[{i}]"
            segs.append((float(_require(seg, "t0", name)), float(_require(seg, "t1", name)),
                         _source_value(reader, name, seg)))
        return TimeTable(tuple(segs))
    return _source_value(reader, "source", spec)


def build_drift(reader: _Reader, spec):
    if spec is None:
        return None
    if isinstance(spec, list) and spec and isinstance(spec[0], dict):
        segs = []
        for i, seg in enumerate(spec):
            name = f"drift[{i}]"
            segs.append((float(_require(seg, "t0", name)), float(_require(seg, "t1", name)),
                         reader.vector_pair(f"{name}.value", _require(seg, "value", name))))
        return TimeTable(tuple(segs))
    return reader.vector_pair("drift", spec)


def solver_config(spec: dict | None) -> SolverConfig:
    spec = spec or {}
    known = {"gap_tol", "max_iter", "residual_tol", "relaxation", "check_every"}
    unknown = set(spec) - known
    if unknown:
        raise ScenarioError("solver", f"unknown keys {sorted(unknown)}")
    try:
        return SolverConfig(
            max_iterations=int(spec.get("max_iter", 20000)),
            gap_tolerance=float(spec.get("gap_tol", 1e-8)),
            residual_tolerance=float(spec.get("residual_tol", spec.get("gap_tol", 1e-8))),
            relaxation=float(spec.get("relaxation", 1.0)),
            check_every=int(spec.get("check_every", 10)),
        )
    except DomainError as exc:
        raise ScenarioError("solver", str(exc)) from exc


def load_document(path) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise ScenarioError("config", f"file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("config", "top level must be an object")
    return doc, path.resolve().parent


def _common(doc: dict, base: Path):
    mesh = build_mesh(_require(doc, "mesh"))
    partition = build_partition(mesh, _require(doc, "boundaries"))
    reader = _Reader(base, mesh)
    try:
        law = law_from_config(doc.get("law", {"family": "quadratic"}), mesh.n_nodes)
    except (DomainError, TypeError, ValueError) as exc:
        raise ScenarioError("law", str(exc)) from exc
    sigma = reader.pair("sigma", doc.get("sigma", 1.0), mesh.points)
    return mesh, partition, reader, law, sigma


def scenario_from_config(doc: dict, base_dir=".") -> tuple[Scenario, SolverConfig]:
    base = Path(base_dir)
    mesh, partition, reader, law, sigma = _common(doc, base)
    rho0 = reader.pair("initial", _require(doc, "initial"), mesh.points, columns=("rho1", "rho2"))
    time = _require(doc, "time")
    tau, T = _require(time, "tau", "time"), _require(time, "T", "time")
    try:
        tau, T = float(tau), float(T)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("time", str(exc)) from exc
    weights = doc.get("weights")
    scenario = Scenario(
        mesh=mesh,
        partition=partition,
        law=law,
        sigma=sigma,
        rho0=rho0,
        tau=tau,
        T=T,
        drift=build_drift(reader, doc.get("drift")),
        source=build_source(reader, doc.get("source")),
        boundary=build_boundary_data(reader, doc.get("boundary_data")),
        alpha=None if weights is None else tuple(weights),
        snapshot_stride=int(time.get("snapshot_stride", 1)),
    )
    return scenario, solver_config(doc.get("solver"))


def step_problem_from_config(doc: dict, base_dir=".") -> tuple[StepProblem, SolverConfig]:
    base = Path(base_dir)
    mesh, partition, reader, law, sigma = _common(doc, base)
    mu = reader.pair("mu", doc.get("mu", 0.0), mesh.points)
    chi = reader.vector_pair("chi", doc.get("chi"))
    bd = build_boundary_data(reader, doc.get("boundary_data"))
    try:
        problem = StepProblem(mesh=mesh, partition=partition, sigma=sigma, law=law, mu=mu, chi=chi, pi=bd.pi, g=bd.g)
    except DomainError as exc:
        raise ScenarioError("step", str(exc)) from exc
    return problem, solver_config(doc.get("solver"))


def field_from_config(doc: dict, base_dir="."):
    """Mesh, partition, sigma and a (f0, fbar) functional pair for dual-norm queries."""
    base = Path(base_dir)
    mesh = build_mesh(_require(doc, "mesh"))
    partition = build_partition(mesh, _require(doc, "boundaries"))
    reader = _Reader(base, mesh)
    sigma = reader.pair("sigma", doc.get("sigma", 1.0), mesh.points)
    spec = _require(doc, "field")
    f0 = reader.pair("field.f0", spec.get("f0", 0.0), mesh.points, columns=("f1", "f2"))
    fbar = reader.vector_pair("field.fbar", spec.get("fbar"))
    return mesh, partition, sigma, (f0, fbar)
