"""Run configuration: a flat-keyed TOML document plus the objects built from it.

Keys are dotted paths such as ``problem.bc`` or ``model.orders``; in the file
they may be written either as TOML tables or as dotted keys.  Coefficient
functions are numbers, arithmetic expressions in ``x`` (and ``y`` on a
rectangle), or two-column CSV tables named by a ``*_file`` key.
"""

from __future__ import annotations

import ast
import csv
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError
from .forward import ForwardConfig, TimeGrid
from .inverse import IdentificationConfig, LsqConfig
from .mlf import FractionalModel
from .spectral import (
    DIRICHLET,
    NEUMANN,
    ConstantCoefficientSpec,
    EigenSystem,
    ModalWeights,
    SturmLiouvilleProblem,
    closed_form_eigs,
    project_initial_data,
    solve_eigs_fd,
)

# key -> default; the default fixes the type of the value
SCHEMA: dict[str, object] = {
    "problem.dim": 1,
    "problem.ell": 1.0,
    "problem.width": 1.0,
    "problem.bc": DIRICHLET,
    "problem.p": 1.0,
    "problem.c": 0.0,
    "problem.p_file": "",
    "problem.c_file": "",
    "problem.modes": 60,
    "problem.mesh_size": 0,
    "data.kind": "l2",
    "data.a": "x*(1-x)",
    "data.a_file": "",
    "data.x0": [0.5],
    "model.orders": [0.5],
    "model.weights": [1.0],
    "observation.t0": 1e-3,
    "observation.T": 100.0,
    "observation.count": 120,
    "observation.spacing": "geometric",
    "forward.mode_tail_tol": 1e-6,
    "forward.ode_initial_steps": 64,
    "forward.ode_substeps": 2,
    "forward.ode_levels": 2,
    "inverse.n_max": 4,
    "inverse.residual_drop_threshold": 0.3,
    "inverse.seed": 0,
    "inverse.eta_grid": [],
    "inverse.lsq_max_iter": 60,
    "inverse.lsq_step_tol": 1e-10,
    "inverse.lsq_residual_tol": 1e-9,
    "inverse.lsq_damping_init": 1e-3,
    "synth.noise_level": 0.0,
    "synth.seed": 0,
    "laplace.etas": [],
    "output.dir": "out",
}

# keys whose value may be a number or an expression string
COEFFICIENT_KEYS = {"problem.p", "problem.c", "data.a"}
FILE_KEYS = ("problem.p_file", "problem.c_file", "data.a_file")


# ---------------------------------------------------------------------------
# expressions

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos}
_CONSTS = {"pi": math.pi}
_VARIABLES = ("x", "y")


def _check(node: ast.AST, text: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, text)
    elif isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        _check(node.left, text)
        _check(node.right, text)
    elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        _check(node.operand, text)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name) and (node.id in _CONSTS or node.id in _VARIABLES):
        pass
    elif (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        _check(node.args[0], text)
    else:
        raise ConfigError(f"expression {text!r}: unsupported element {ast.dump(node)[:40]}")


def _evaluate(node: ast.AST, env: dict):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_evaluate(node.operand, env))
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return _CONSTS[node.id] if node.id in _CONSTS else env[node.id]
    return _FUNCS[node.func.id](_evaluate(node.args[0], env))


@dataclass(frozen=True)
class Expression:
    """Arithmetic in ``x``, ``y``, ``pi`` with ``+ - * / ^`` and ``exp``, ``sin``, ``cos``."""

    text: str
    tree: ast.Expression = field(repr=False, compare=False)

    @classmethod
    def parse(cls, text: str) -> Expression:
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"expression {text!r}: {exc.msg}") from None
        _check(tree, text)
        return cls(text, tree)

    def __call__(self, x, y=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": x if y is None else np.asarray(y, dtype=float)}
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(_evaluate(self.tree, env), dtype=float), np.broadcast(x, env["y"]).shape)
        return np.array(out)


def read_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column ``x,value`` CSV with an optional header row and ``#`` comments."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    rows = []
    for lineno, row in enumerate(csv.reader(line for line in lines if not line.lstrip().startswith("#")), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise ConfigError(f"{path}: row {lineno} needs two columns")
        try:
            rows.append((float(row[0]), float(row[1])))
        except ValueError:
            if rows or lineno > 1:
                raise ConfigError(f"{path}: row {lineno} is not numeric") from None
    if len(rows) < 2:
        raise ConfigError(f"{path}: a coefficient table needs at least two rows")
    xs, ys = np.array(rows).T
    if np.any(np.diff(xs) <= 0):
        raise ConfigError(f"{path}: x column must be strictly increasing")
    return xs, ys


# ---------------------------------------------------------------------------
# run configuration


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, path + "."))
        else:
            flat[path] = value
    return flat


def _coerce(key: str, value):
    default = SCHEMA[key]
    if key in COEFFICIENT_KEYS and isinstance(value, str):
        Expression.parse(value)
        return value
    if isinstance(default, list):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers")
        return [float(v) for v in value]
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{key}: booleans are not accepted")
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


@dataclass
class RunConfig:
    """Flat ``key -> value`` settings; ``base_dir`` anchors relative file paths."""

    values: dict = field(default_factory=lambda: dict(SCHEMA))
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> RunConfig:
        values = dict(SCHEMA)
        for key, value in _flatten(doc).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _coerce(key, value)
        cfg = cls(values, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def loads(cls, text: str, base_dir=".") -> RunConfig:
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"configuration does not parse: {exc}") from None
        return cls.from_dict(doc, base_dir)

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from None
        return cls.loads(text, path.parent)

    def to_dict(self) -> dict:
        doc: dict = {}
        for key in SCHEMA:
            section, name = key.split(".", 1)
            doc.setdefault(section, {})[name] = self.values[key]
        return doc

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def __getitem__(self, key: str):
        return self.values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def path(self, key: str) -> Path | None:
        raw = self.values[key]
        if not raw:
            return None
        path = Path(raw)
        return path if path.is_absolute() else self.base_dir / path

    def validate(self) -> None:
        v = self.values
        for key in FILE_KEYS:
            path = self.path(key)
            if path is not None and not path.is_file():
                raise ConfigError(f"{key}: file {path} does not exist")
        if v["problem.dim"] not in (1, 2):
            raise ConfigError("problem.dim must be 1 or 2")
        if v["problem.bc"] not in (NEUMANN, DIRICHLET):
            raise ConfigError(f"problem.bc must be {NEUMANN!r} or {DIRICHLET!r}")
        if v["data.kind"] not in ("l2", "delta"):
            raise ConfigError("data.kind must be 'l2' or 'delta'")
        if v["data.kind"] == "delta" and (v["problem.bc"] != NEUMANN or v["problem.dim"] != 1):
            raise ConfigError("point-mass data need a 1-D Neumann problem")
        if v["data.kind"] == "l2" and v["problem.bc"] != DIRICHLET:
            raise ConfigError("square-integrable data need a Dirichlet problem")
        if v["problem.modes"] < 1:
            raise ConfigError("problem.modes must be at least 1")
        if len(v["data.x0"]) != v["problem.dim"]:
            raise ConfigError("data.x0 needs one coordinate per dimension")
        if v["synth.noise_level"] < 0:
            raise ConfigError("synth.noise_level must be non-negative")
        try:
            self.model()
            self.forward_config()
            self.identification_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- builders ----------------------------------------------------------

    def _coefficient(self, key: str):
        table = self.path(key + "_file")
        if table is not None:
            return read_table(table)
        value = self.values[key]
        return Expression.parse(value) if isinstance(value, str) else float(value)

    def problem(self) -> SturmLiouvilleProblem:
        if self["problem.dim"] != 1:
            raise ConfigError("a Sturm-Liouville problem is one-dimensional")
        try:
            return SturmLiouvilleProblem(
                self._coefficient("problem.p"), self._coefficient("problem.c"), self["problem.ell"], self["problem.bc"]
            )
        except ValueError as exc:
            raise ConfigError(f"ill-posed problem: {exc}") from None

    def eigensystem(self) -> EigenSystem:
        """Finite differences on an interval, closed forms on a rectangle."""
        modes = self["problem.modes"]
        mesh = self["problem.mesh_size"] or None
        if self["problem.dim"] == 1:
            return solve_eigs_fd(self.problem(), modes, mesh)
        probe = np.linspace(0.0, 1.0, 9)
        consts = []
        for key in ("problem.p", "problem.c"):
            coef = self._coefficient(key)
            vals = coef(probe, probe) if isinstance(coef, Expression) else np.full(1, coef) if np.isscalar(coef) else None
            if vals is None or np.ptp(vals) > 0:
                raise ConfigError("rectangles need constant coefficients")
            consts.append(float(vals[0]))
        try:
            spec = ConstantCoefficientSpec((self["problem.ell"], self["problem.width"]), consts[0], consts[1], self["problem.bc"])
        except ValueError as exc:
            raise ConfigError(f"ill-posed problem: {exc}") from None
        return closed_form_eigs(spec, modes, mesh)

    def initial_data(self, eigs: EigenSystem) -> np.ndarray:
        coef = self._coefficient("data.a")
        if eigs.dim == 1:
            x = eigs.mesh
            if isinstance(coef, tuple):
                return np.interp(x, *coef)
            return coef(x) if isinstance(coef, Expression) else np.full(x.shape, coef)
        gx, gy = np.meshgrid(*eigs.mesh, indexing="ij")
        if isinstance(coef, tuple):
            raise ConfigError("tabulated initial data are one-dimensional")
        return coef(gx, gy) if isinstance(coef, Expression) else np.full(gx.shape, coef)

    def x0(self):
        x0 = self["data.x0"]
        return x0[0] if len(x0) == 1 else tuple(x0)

    def weights(self, eigs: EigenSystem) -> ModalWeights:
        if self["data.kind"] == "delta":
            return project_initial_data(eigs, "dirac")
        try:
            return project_initial_data(eigs, self.initial_data(eigs), self.x0())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model(self) -> FractionalModel:
        return FractionalModel.from_pairs(self["model.orders"], self["model.weights"])

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self["observation.t0"], self["observation.T"], self["observation.count"], self["observation.spacing"])

    def forward_config(self) -> ForwardConfig:
        return ForwardConfig(
            mode_count=self["problem.modes"],
            mode_tail_tol=self["forward.mode_tail_tol"],
            time_grid=self.time_grid(),
            ode_initial_steps=self["forward.ode_initial_steps"],
            ode_substeps=self["forward.ode_substeps"],
            ode_levels=self["forward.ode_levels"],
        )

    def identification_config(self) -> IdentificationConfig:
        lsq = LsqConfig(
            self["inverse.lsq_max_iter"],
            self["inverse.lsq_step_tol"],
            self["inverse.lsq_residual_tol"],
            self["inverse.lsq_damping_init"],
        )
        grid = tuple(self["inverse.eta_grid"]) or None
        return IdentificationConfig(
            n_max=self["inverse.n_max"],
            eta_grid=grid,
            lsq=lsq,
            residual_drop_threshold=self["inverse.residual_drop_threshold"],
            seed=self["inverse.seed"],
            forward=self.forward_config(),
        )

    def laplace_etas(self, window: tuple[float, float]) -> np.ndarray:
        if self["laplace.etas"]:
            return np.asarray(self["laplace.etas"], dtype=float)
        t0, T = window
        return np.geomspace(2.5 / T, min(10.0, 0.05 / t0), 40)
