"""Eigensystems of the spatial operator ``A psi = -(p psi')' - c psi``.

Covers the one-dimensional variable-coefficient problem with Neumann or
Dirichlet conditions (finite differences) and constant-coefficient intervals
and Dirichlet rectangles (closed form).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.linalg import eigh_tridiagonal

from .errors import NormalizationError, QuadratureWarning, ResolutionError, UnsupportedCase

GridFunction = Union[float, Callable[[np.ndarray], np.ndarray], tuple]

NEUMANN = "neumann"
DIRICHLET = "dirichlet"


def _as_callable(f: GridFunction) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f):
        return f
    if isinstance(f, tuple):
        xs, ys = (np.asarray(v, dtype=float) for v in f)
        return lambda x: np.interp(x, xs, ys)
    value = float(f)
    return lambda x: np.full_like(np.asarray(x, dtype=float), value)


@dataclass(frozen=True)
class SturmLiouvilleProblem:
    """``-(p u')' - c u`` on ``(0, ell)`` with homogeneous Neumann or Dirichlet data.

    ``p`` and ``c`` are constants, vectorized callables, or ``(x, values)``
    tables interpolated linearly.
    """

    p: GridFunction = 1.0
    c: GridFunction = 0.0
    ell: float = math.pi
    bc: str = NEUMANN

    def __post_init__(self) -> None:
        if not self.ell > 0:
            raise ValueError(f"domain length must be positive, got {self.ell}")
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ValueError(f"bc must be {NEUMANN!r} or {DIRICHLET!r}, got {self.bc!r}")
        probe = np.linspace(0.0, self.ell, 1025)
        if np.any(self.p_of(probe) <= 0):
            raise ValueError("p must be positive on [0, ell]")
        if np.any(self.c_of(probe) > 0):
            raise ValueError("c must be nonpositive on [0, ell]")

    def p_of(self, x) -> np.ndarray:
        return np.asarray(_as_callable(self.p)(np.asarray(x, dtype=float)), dtype=float)

    def c_of(self, x) -> np.ndarray:
        return np.asarray(_as_callable(self.c)(np.asarray(x, dtype=float)), dtype=float)

    def constant_coefficients(self) -> tuple[float, float] | None:
        probe = np.linspace(0.0, self.ell, 257)
        p, c = self.p_of(probe), self.c_of(probe)
        if np.ptp(p) > 1e-14 * abs(p[0]) or np.ptp(c) > 1e-14 * max(1.0, abs(c[0])):
            return None
        return float(p[0]), float(c[0])


@dataclass(frozen=True)
class ConstantCoefficientSpec:
    """Constant ``p``, ``c`` on an interval ``(0, lengths[0])`` or a rectangle."""

    lengths: tuple[float, ...] = (math.pi,)
    p: float = 1.0
    c: float = 0.0
    bc: str = DIRICHLET

    def __post_init__(self) -> None:
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) not in (1, 2) or min(lengths) <= 0:
            raise ValueError("lengths must hold one or two positive values")
        if self.p <= 0 or self.c > 0:
            raise ValueError("need p > 0 and c <= 0")

    @property
    def dim(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs sampled on a shared mesh.

    ``phis[k]`` samples the k-th eigenfunction on ``mesh`` (a node array in
    1-D, an ``(x, y)`` pair in 2-D). Neumann systems are scaled so that
    ``phi_k(0) = 1``; Dirichlet ones are L2-normalized. ``sigmas`` holds
    ``1 / ||phi_k||^2`` and ``quad_weights`` the trapezoid weights used for
    every inner product on the mesh.
    """

    lambdas: np.ndarray
    phis: np.ndarray
    sigmas: np.ndarray
    mesh: object
    quad_weights: np.ndarray
    bc: str
    lengths: tuple[float, ...]
    lambda_errors: np.ndarray = field(default=None)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def count(self) -> int:
        return int(self.lambdas.size)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.quad_weights * f * g))

    def gram(self) -> np.ndarray:
        flat = self.phis.reshape(self.count, -1)
        return (flat * self.quad_weights.ravel()) @ flat.T

    def values_at(self, x0) -> np.ndarray:
        """phi_k(x0) for every retained mode (cubic interpolation)."""
        if self.dim == 1:
            x0 = float(x0)
            spline = CubicSpline(self.mesh, self.phis.T)
            return np.asarray(spline(x0), dtype=float)
        grid = RegularGridInterpolator(self.mesh, np.moveaxis(self.phis, 0, -1), method="cubic")
        return np.asarray(grid(np.atleast_2d(np.asarray(x0, dtype=float)))[0], dtype=float)

    def truncated(self, count: int) -> EigenSystem:
        errs = None if self.lambda_errors is None else self.lambda_errors[:count]
        return EigenSystem(
            self.lambdas[:count], self.phis[:count], self.sigmas[:count], self.mesh,
            self.quad_weights, self.bc, self.lengths, errs,
        )


@dataclass(frozen=True)
class ModalWeights:
    """Observation weights ``rho_j`` paired with eigenvalues ``lambda_j``."""

    rhos: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self) -> None:
        rhos = np.asarray(self.rhos, dtype=float)
        lams = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "lambdas", lams)
        if rhos.shape != lams.shape or rhos.ndim != 1:
            raise ValueError("rhos and lambdas must be 1-D arrays of equal length")
        if not np.all(np.isfinite(rhos)):
            raise ValueError("weights must be finite")

    def __add__(self, other: ModalWeights) -> ModalWeights:
        if not np.array_equal(self.lambdas, other.lambdas):
            raise ValueError("weights refer to different spectra")
        return ModalWeights(self.rhos + other.rhos, self.lambdas)

    def __len__(self) -> int:
        return int(self.rhos.size)

    def truncated(self, count: int) -> ModalWeights:
        return ModalWeights(self.rhos[:count], self.lambdas[:count])


# ---------------------------------------------------------------------------
# finite differences


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _tridiagonal(problem: SturmLiouvilleProblem, cells: int):
    """Symmetric tridiagonal form of the conservative central-difference operator.

    Returns ``(diag, offdiag, nodes, scale)`` where eigenvectors of the
    returned matrix map to nodal values through ``scale``.
    """
    h = problem.ell / cells
    nodes = np.linspace(0.0, problem.ell, cells + 1)
    p_half = problem.p_of(nodes[:-1] + h / 2)
    c = problem.c_of(nodes)
    if problem.bc == DIRICHLET:
        diag = (p_half[:-1] + p_half[1:]) / h**2 - c[1:-1]
        off = -p_half[1:-1] / h**2
        return diag, off, nodes, np.ones(cells - 1)
    # Neumann via mirrored ghost nodes; boundary rows are half cells, so the
    # problem is K v = lam M v with M = diag(1/2, 1, ..., 1, 1/2).
    diag = np.empty(cells + 1)
    diag[1:-1] = (p_half[:-1] + p_half[1:]) / h**2 - c[1:-1]
    diag[0] = 2 * p_half[0] / h**2 - c[0]
    diag[-1] = 2 * p_half[-1] / h**2 - c[-1]
    mass = np.ones(cells + 1)
    mass[0] = mass[-1] = 0.5
    k_diag = diag * mass
    k_off = -p_half / h**2
    root = np.sqrt(mass)
    return k_diag / mass, k_off / (root[:-1] * root[1:]), nodes, 1.0 / root


def _fd_eigenvalues(problem: SturmLiouvilleProblem, count: int, cells: int) -> np.ndarray:
    diag, off, _, _ = _tridiagonal(problem, cells)
    return eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, count - 1))


def solve_eigs_fd(
    problem: SturmLiouvilleProblem,
    count: int,
    mesh_size: int | None = None,
    *,
    rel_tol: float = 1e-6,
) -> EigenSystem:
    """First ``count`` eigenpairs by second-order central differences.

    ``mesh_size`` is the number of cells (default ``32 * count``; at least
    ``8 * count``). Eigenvalues are Richardson-extrapolated from meshes of
    ``mesh_size``, ``2 * mesh_size`` and ``4 * mesh_size`` cells, and the
    spread between the two extrapolants is kept as ``lambda_errors``.
    Eigenfunctions are sampled on the base mesh.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    cells = 32 * count if mesh_size is None else int(mesh_size)
    if cells < 8 * count:
        raise ValueError(f"mesh_size must be at least 8 * count = {8 * count}")

    diag, off, nodes, scale = _tridiagonal(problem, cells)
    lam_h, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    lam_2h = _fd_eigenvalues(problem, count, 2 * cells)
    lam_4h = _fd_eigenvalues(problem, count, 4 * cells)
    first = (4 * lam_2h - lam_h) / 3
    second = (4 * lam_4h - lam_2h) / 3
    errors = np.abs(second - first)
    lambdas = second
    top = max(abs(lambdas[-1]), 1.0)
    if errors[-1] > rel_tol * top:
        raise ResolutionError(
            f"eigenvalue {count} error estimate {errors[-1]:.3g} exceeds {rel_tol:g} * lambda; raise mesh_size"
        )

    weights = _trapezoid_weights(nodes)
    vecs = vecs * scale[:, None]
    if problem.bc == DIRICHLET:
        full = np.zeros((count, nodes.size))
        full[:, 1:-1] = vecs.T
        norms = np.sqrt((full**2 * weights).sum(axis=1))
        full /= norms[:, None]
        full *= np.sign(full[:, 1])[:, None]
        sigmas = np.ones(count)
    else:
        full = vecs.T.copy()
        norms = np.sqrt((full**2 * weights).sum(axis=1))
        full /= norms[:, None]
        at_zero = full[:, 0]
        if np.any(np.abs(at_zero) < 1e-8):
            bad = int(np.argmin(np.abs(at_zero))) + 1
            raise NormalizationError(f"eigenfunction {bad} vanishes at x = 0")
        full /= at_zero[:, None]
        sigmas = 1.0 / (full**2 * weights).sum(axis=1)
    return EigenSystem(lambdas, full, sigmas, nodes, weights, problem.bc, (problem.ell,), errors)


# ---------------------------------------------------------------------------
# closed forms


def closed_form_eigs(case, count: int, mesh_size: int | None = None) -> EigenSystem:
    """Exact eigenpairs for constant coefficients.

    ``case`` is a :class:`ConstantCoefficientSpec` or a constant-coefficient
    :class:`SturmLiouvilleProblem`. Rectangles support Dirichlet data only;
    equal eigenvalues are ordered lexicographically by ``(i, j)``.
    """
    if isinstance(case, SturmLiouvilleProblem):
        consts = case.constant_coefficients()
        if consts is None:
            raise UnsupportedCase("closed forms need constant p and c")
        case = ConstantCoefficientSpec((case.ell,), consts[0], consts[1], case.bc)
    if count < 1:
        raise ValueError("count must be at least 1")
    p, c = case.p, case.c
    if case.dim == 1:
        ell = case.lengths[0]
        cells = 32 * count if mesh_size is None else int(mesh_size)
        x = np.linspace(0.0, ell, cells + 1)
        weights = _trapezoid_weights(x)
        k = np.arange(1, count + 1)
        if case.bc == DIRICHLET:
            freq = k * math.pi / ell
            phis = math.sqrt(2.0 / ell) * np.sin(np.outer(freq, x))
            sigmas = np.ones(count)
        else:
            freq = (k - 1) * math.pi / ell
            phis = np.cos(np.outer(freq, x))
            sigmas = np.where(k == 1, 1.0 / ell, 2.0 / ell)
        lambdas = p * freq**2 - c
        return EigenSystem(lambdas, phis, sigmas, x, weights, case.bc, (ell,), np.zeros(count))

    if case.bc != DIRICHLET:
        raise UnsupportedCase("rectangles are supported with Dirichlet conditions only")
    a, b = case.lengths
    span = count + 1
    pairs = [(p * math.pi**2 * (i**2 / a**2 + j**2 / b**2) - c, i, j) for i in range(1, span + 1) for j in range(1, span + 1)]
    pairs.sort()
    chosen = pairs[:count]
    cells = 8 * int(math.ceil(math.sqrt(count))) * 4 if mesh_size is None else int(mesh_size)
    x = np.linspace(0.0, a, cells + 1)
    y = np.linspace(0.0, b, cells + 1)
    weights = np.outer(_trapezoid_weights(x), _trapezoid_weights(y))
    norm = 2.0 / math.sqrt(a * b)
    phis = np.stack([norm * np.outer(np.sin(i * math.pi * x / a), np.sin(j * math.pi * y / b)) for _, i, j in chosen])
    lambdas = np.array([lam for lam, _, _ in chosen])
    return EigenSystem(lambdas, phis, np.ones(count), (x, y), weights, DIRICHLET, (a, b), np.zeros(count))


# ---------------------------------------------------------------------------
# diagnostics and projection


@dataclass(frozen=True)
class WeylReport:
    slope: float
    expected: float
    passed: bool
    c0: float
    c1: float

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"weyl slope={self.slope:.4f} expected={self.expected:.4f} "
            f"C0={self.c0:.4g} C1={self.c1:.4g} {verdict}"
        )


def weyl_check(eigs: EigenSystem, dim: int | None = None, *, rel_tol: float = 0.15) -> WeylReport:
    """Fit ``log lambda_j ~ slope * log j`` on the upper half of the spectrum.

    Passes when the slope is within ``rel_tol`` of ``2 / dim``. ``c0``/``c1``
    bracket ``lambda_j / j^(2/dim)`` over the positive eigenvalues.
    """
    dim = eigs.dim if dim is None else dim
    if eigs.count < 20:
        raise ValueError("weyl_check needs at least 20 eigenvalues")
    j = np.arange(1, eigs.count + 1, dtype=float)
    upper = slice(eigs.count // 2, None)
    slope = float(np.polyfit(np.log(j[upper]), np.log(eigs.lambdas[upper]), 1)[0])
    expected = 2.0 / dim
    positive = eigs.lambdas > 0
    ratio = eigs.lambdas[positive] / j[positive] ** expected
    return WeylReport(slope, expected, abs(slope - expected) <= rel_tol * expected, float(ratio.min()), float(ratio.max()))


def _simpson(eigs: EigenSystem, f: np.ndarray) -> float:
    if eigs.dim == 1:
        return float(simpson(f, x=eigs.mesh))
    x, y = eigs.mesh
    return float(simpson(simpson(f, x=y, axis=1), x=x))


def project_initial_data(eigs: EigenSystem, a, x0=None, *, quad_tol: float = 1e-8) -> ModalWeights:
    """Observation weights ``rho_j = sigma_j (a, phi_j) phi_j(x0)``.

    ``a`` is an array sampled on the eigensystem mesh, or ``"dirac"`` for a
    point mass at x = 0 observed at x = 0, where the weight reduces to
    ``sigma_j`` (the eigenfunctions are normalized to one there).
    """
    if isinstance(a, str):
        if a != "dirac":
            raise ValueError(f"unknown initial datum {a!r}")
        if eigs.bc != NEUMANN or eigs.dim != 1:
            raise ValueError("Dirac data need a 1-D Neumann eigensystem")
        if not np.allclose(eigs.phis[:, 0], 1.0):
            raise ValueError("Dirac data need the phi_k(0) = 1 normalization")
        return ModalWeights(eigs.sigmas.copy(), eigs.lambdas.copy())

    a = np.asarray(a, dtype=float)
    if a.shape != eigs.phis.shape[1:]:
        raise ValueError(f"initial data shape {a.shape} does not match the mesh {eigs.phis.shape[1:]}")
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    for xi, length in zip(x0_arr, eigs.lengths):
        if not 0.0 < xi < length:
            raise ValueError(f"observation point {x0} must lie strictly inside the domain")
    flat_w = (eigs.quad_weights * a).ravel()
    coeffs = eigs.phis.reshape(eigs.count, -1) @ flat_w
    simp = np.array([_simpson(eigs, a * phi) for phi in eigs.phis])
    gap = float(np.max(np.abs(simp - coeffs)))
    if gap > quad_tol:
        warnings.warn(f"trapezoid and Simpson projections differ by {gap:.3g}", QuadratureWarning, stacklevel=2)
    rhos = eigs.sigmas * coeffs * eigs.values_at(x0 if eigs.dim == 2 else float(x0_arr[0]))
    return ModalWeights(rhos, eigs.lambdas.copy())


def write_eigensystem_csv(eigs: EigenSystem, out_dir) -> tuple[Path, Path]:
    """Write ``eigenvalues.csv`` (k, lambda, sigma, error) and ``eigenfunctions.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    values_path, funcs_path = out / "eigenvalues.csv", out / "eigenfunctions.csv"
    errors = eigs.lambda_errors if eigs.lambda_errors is not None else np.zeros(eigs.count)
    with values_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "lambda", "sigma", "lambda_error"])
        for k, (lam, sig, err) in enumerate(zip(eigs.lambdas, eigs.sigmas, errors), start=1):
            writer.writerow([k, repr(float(lam)), repr(float(sig)), repr(float(err))])
    with funcs_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if eigs.dim == 1:
            writer.writerow(["x"] + [f"phi_{k}" for k in range(1, eigs.count + 1)])
            for i, xi in enumerate(eigs.mesh):
                writer.writerow([repr(float(xi))] + [repr(float(v)) for v in eigs.phis[:, i]])
        else:
            x, y = eigs.mesh
            writer.writerow(["x", "y"] + [f"phi_{k}" for k in range(1, eigs.count + 1)])
            for i, xi in enumerate(x):
                for j, yj in enumerate(y):
                    writer.writerow([repr(float(xi)), repr(float(yj))] + [repr(float(v)) for v in eigs.phis[:, i, j]])
    return values_path, funcs_path
