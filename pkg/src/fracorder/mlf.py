"""Multinomial Mittag-Leffler function and per-mode fractional relaxation.

Two independent routes compute the scalar mode response

    y(t) = 1 - (lam / q_n) * t**a_n * E_{(a_n, a_n - a_1, ..., a_n - a_{n-1}), 1 + a_n}(z)

of ``sum_i q_i D^{a_i} y = -lam * y, y(0) = 1``:

* the truncated multinomial series (:func:`eval_multinomial_ml`), exact up to
  tail and rounding error while its arguments stay moderate;
* an L1 product-integration discretization of the Caputo derivatives
  (:func:`frac_ode_solve`), which works for any ``lam * t**a_n`` and is the
  only viable route for stiff modes.

:func:`eval_mode` picks one; :func:`mode_responses` evaluates whole
(mode x time) tables for the forward model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import mpmath
import numpy as np
from scipy.special import gammaln, rgamma

from .errors import DomainError, NonConvergence, StepSizeError

_EPS = np.finfo(float).eps
# float binomials overflow past this row
_MAX_DEGREE = 1000
# the auto route keeps a double-precision series value below this error
_AUTO_SERIES_TOL = 1e-8
# Gamma attains its minimum on (0, inf) at this abscissa
_GAMMA_ARGMIN = 1.4616321449683623
_GAMMA_MIN = 0.8856031944108887


@dataclass(frozen=True)
class MLParams:
    """Parameters (theta0; theta_1..theta_n) of a multinomial ML function.

    ``theta_j = 1`` and ``theta0 = 2`` are admitted so the classical
    exponential relaxation (order 1) can be expressed.
    """

    theta0: float
    thetas: tuple[float, ...]

    def __post_init__(self) -> None:
        thetas = tuple(float(v) for v in np.atleast_1d(self.thetas))
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "theta0", float(self.theta0))
        if not thetas:
            raise ValueError("at least one theta is required")
        if not 0.0 < self.theta0 <= 2.0:
            raise ValueError(f"theta0 must lie in (0, 2], got {self.theta0}")
        for th in thetas:
            if not 0.0 < th <= 1.0:
                raise ValueError(f"theta_j must lie in (0, 1], got {th}")

    @property
    def n(self) -> int:
        return len(self.thetas)


@dataclass(frozen=True)
class FractionalModel:
    """Time-fractional operator ``sum_j q_j D^{alpha_j}``.

    Orders are strictly increasing in (0, 1]; order 1 is the ordinary
    derivative. Use :meth:`from_pairs` to build from unsorted input.
    """

    orders: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        orders = tuple(float(v) for v in np.atleast_1d(self.orders))
        weights = tuple(float(v) for v in np.atleast_1d(self.weights))
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "weights", weights)
        if not orders or len(orders) != len(weights):
            raise ValueError("orders and weights must be non-empty and of equal length")
        for a in orders:
            if not 0.0 < a <= 1.0:
                raise ValueError(f"orders must lie in (0, 1], got {a}")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError(f"orders must be strictly increasing, got {orders}")
        if any(not (q > 0.0 and math.isfinite(q)) for q in weights):
            raise ValueError(f"weights must be positive, got {weights}")

    @classmethod
    def from_pairs(cls, orders: Sequence[float], weights: Sequence[float]) -> FractionalModel:
        """Canonical (sorted by order) model from paired, possibly unsorted input."""
        pairs = sorted(zip(map(float, orders), map(float, weights)))
        return cls(tuple(a for a, _ in pairs), tuple(q for _, q in pairs))

    @property
    def n(self) -> int:
        return len(self.orders)

    @property
    def top(self) -> float:
        return self.orders[-1]

    def symbol(self, s):
        """w(s) = sum_j q_j s**alpha_j."""
        s = np.asarray(s, dtype=float)
        return sum(q * s**a for a, q in zip(self.orders, self.weights))

    def ml_params(self) -> MLParams:
        an = self.top
        return MLParams(1.0 + an, (an,) + tuple(an - a for a in self.orders[:-1]))

    def ml_arguments(self, lam: float, t: float) -> np.ndarray:
        an, qn = self.top, self.weights[-1]
        z = [-(lam / qn) * t**an]
        z += [-(q / qn) * t ** (an - a) for a, q in zip(self.orders[:-1], self.weights[:-1])]
        return np.array(z, dtype=float)


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation and precision controls for the series route.

    ``precision`` is ``"double"``, ``"extended"`` or ``"auto"``; the latter
    re-sums in multiprecision when the double-precision rounding estimate
    exceeds ``roundoff_tol``.
    """

    abs_tol: float = 1e-15
    max_total_degree: int = 600
    series_domain_radius: float = 5.0
    roundoff_tol: float = 1e-12
    precision: str = "auto"
    max_terms: int = 200_000

    def __post_init__(self) -> None:
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not 1 <= self.max_total_degree <= _MAX_DEGREE:
            raise ValueError(f"max_total_degree must lie in [1, {_MAX_DEGREE}]")
        if not self.series_domain_radius > 0:
            raise ValueError("series_domain_radius must be positive")
        if self.precision not in ("double", "extended", "auto"):
            raise ValueError(f"unknown precision {self.precision!r}")


DEFAULT_POLICY = TruncationPolicy()


# ---------------------------------------------------------------------------
# series route


@lru_cache(maxsize=1)
def _binomial_table() -> np.ndarray:
    table = np.zeros((_MAX_DEGREE + 1, _MAX_DEGREE + 1))
    row = [1]
    for r in range(_MAX_DEGREE + 1):
        table[r, : r + 1] = row
        row = [1] + [a + b for a, b in zip(row, row[1:])] + [1]
    return table


@lru_cache(maxsize=256)
def _layer(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Compositions of k into n parts and their multinomial coefficients."""
    if n == 1:
        comps = np.array([[k]], dtype=np.int64)
    else:
        parts = []
        for first in range(k, -1, -1):
            rest, _ = _layer(n - 1, k - first)
            head = np.full((rest.shape[0], 1), first, dtype=np.int64)
            parts.append(np.hstack([head, rest]))
        comps = np.vstack(parts)
    table = _binomial_table()
    coef = np.ones(comps.shape[0])
    remaining = np.full(comps.shape[0], k, dtype=np.int64)
    for j in range(n - 1):
        coef *= table[remaining, comps[:, j]]
        remaining = remaining - comps[:, j]
    comps.setflags(write=False)
    coef.setflags(write=False)
    return comps, coef


def _layer_terms(params: MLParams, z: np.ndarray, k: int) -> np.ndarray:
    comps, coef = _layer(params.n, k)
    args = params.theta0 + comps @ np.asarray(params.thetas)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        terms = coef * rgamma(args) * np.prod(np.power(z, comps), axis=1)
    bad = ~np.isfinite(terms) | (args > 170.0)
    if np.any(bad):
        absz = np.abs(z)
        with np.errstate(divide="ignore"):
            logz = np.where(absz > 0, np.log(np.where(absz > 0, absz, 1.0)), -np.inf)
        c = comps[bad]
        logmag = np.log(coef[bad]) - gammaln(args[bad])
        logmag = logmag + np.where(c > 0, c * logz, 0.0).sum(axis=1)
        phase = np.prod(np.power(z / np.where(absz > 0, absz, 1.0), c), axis=1)
        terms = terms.astype(phase.dtype) if np.iscomplexobj(phase) else terms
        terms[bad] = np.exp(logmag) * phase
    return terms


def _gamma_floor(x: np.ndarray) -> np.ndarray:
    """min over y >= x of Gamma(y), in log form."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= _GAMMA_ARGMIN, gammaln(x), math.log(_GAMMA_MIN))


def _direction_profile(params: MLParams, z: np.ndarray, kmax: int) -> np.ndarray:
    """log of |z_j|^k / Gamma(theta0 + theta_j k), j = 1..n, k = 0..kmax."""
    k = np.arange(kmax + 1, dtype=float)
    absz = np.abs(z)
    out = np.full((params.n, kmax + 1), -np.inf)
    for j, (th, a) in enumerate(zip(params.thetas, absz)):
        if a == 0:
            out[j, 0] = -gammaln(params.theta0)
            continue
        out[j] = k * math.log(a) - gammaln(params.theta0 + th * k)
    return out


def series_outlook(params: MLParams, zs, policy: TruncationPolicy = DEFAULT_POLICY) -> tuple[int, float]:
    """Cheap a-priori (degree, peak term) estimate for the series route.

    Uses single-direction terms, which are a subset of the full sum, so the
    degree and peak returned are lower bounds for the true ones.
    """
    z = np.asarray(zs)
    kmax = policy.max_total_degree
    prof = _direction_profile(params, z, kmax)
    peak = math.exp(min(float(prof.max()), 700.0))
    logtol = math.log(policy.abs_tol) - math.log(10.0)
    degree = 0
    for row in prof:
        if not np.isfinite(row[1:]).any():
            continue
        top = int(np.argmax(row))
        below = np.nonzero(row[top:] < logtol)[0]
        degree = max(degree, top + int(below[0]) if below.size else kmax + 1)
    return degree, peak


def _sum_mp(params: MLParams, z: np.ndarray, degree: int, digits: int):
    with mpmath.workdps(digits):
        zm = [mpmath.mpmathify(complex(v)) if np.iscomplexobj(z) else mpmath.mpf(float(v)) for v in z]
        th = [mpmath.mpf(v) for v in params.thetas]
        t0 = mpmath.mpf(params.theta0)
        total = mpmath.mpf(0)
        for k in range(degree + 1):
            comps, _ = _layer(params.n, k)
            for row in comps:
                m = math.factorial(k)
                term = mpmath.mpf(1)
                arg = t0
                for j, kj in enumerate(row):
                    kj = int(kj)
                    m //= math.factorial(kj)
                    if kj:
                        term *= zm[j] ** kj
                        arg += th[j] * kj
                total += m * term * mpmath.rgamma(arg)
        if np.iscomplexobj(z):
            return complex(total)
        return float(total)


def eval_multinomial_ml(params: MLParams, zs, policy: TruncationPolicy = DEFAULT_POLICY):
    """Multinomial Mittag-Leffler function by layer-wise series summation.

    Layers are indexed by total degree ``k = k_1 + ... + k_n``; each layer is
    summed exactly rounded (``math.fsum``). Summation stops once a layer's
    absolute sum drops below ``policy.abs_tol`` on the decreasing side of the
    term profile.

    Returns
    -------
    (value, error_estimate)
        ``error_estimate`` adds a geometric extrapolation of the discarded
        tail to a rounding bound proportional to the summed term magnitudes.

    Raises
    ------
    DomainError
        If any ``|z_i|`` exceeds ``policy.series_domain_radius``.
    NonConvergence
        If the tolerance is not met by ``policy.max_total_degree``.
    """
    z = np.asarray(zs)
    if z.ndim != 1 or z.size != params.n:
        raise ValueError(f"expected {params.n} arguments, got shape {z.shape}")
    if not np.iscomplexobj(z):
        z = z.astype(float)
    if np.any(np.abs(z) > policy.series_domain_radius):
        raise DomainError(
            f"max |z| = {np.abs(z).max():.4g} exceeds series radius {policy.series_domain_radius}"
        )
    degree_hint, _ = series_outlook(params, z, policy)
    if degree_hint > policy.max_total_degree:
        raise NonConvergence(f"series needs more than {policy.max_total_degree} layers")

    complex_args = np.iscomplexobj(z)
    re_parts: list[float] = []
    im_parts: list[float] = []
    bounds: list[float] = []
    n_terms = 0
    for k in range(policy.max_total_degree + 1):
        terms = _layer_terms(params, z, k)
        n_terms += terms.size
        if n_terms > policy.max_terms:
            raise NonConvergence(f"series exceeded the {policy.max_terms}-term budget")
        re_parts.append(math.fsum(terms.real))
        if complex_args:
            im_parts.append(math.fsum(terms.imag))
        bounds.append(float(np.abs(terms).sum()))
        if k >= 2 and bounds[-1] < policy.abs_tol and bounds[-1] <= bounds[-2] <= bounds[-3]:
            break
    else:
        raise NonConvergence(f"series did not converge within {policy.max_total_degree} layers")

    ratio = bounds[-1] / bounds[-2] if bounds[-2] > 0 else 0.0
    tail = bounds[-1] * ratio / (1.0 - ratio) if ratio < 1.0 else bounds[-1]
    rounding = 4.0 * (params.n + 3) * _EPS * math.fsum(bounds)
    value = complex(math.fsum(re_parts), math.fsum(im_parts)) if complex_args else math.fsum(re_parts)

    if policy.precision == "extended" or (policy.precision == "auto" and rounding > policy.roundoff_tol):
        digits = 20 + max(0, int(math.ceil(math.log10(max(bounds)))))
        value = _sum_mp(params, z, len(bounds) - 1, digits)
        rounding = 10.0 ** (-digits + 2) * max(1.0, max(bounds))
    return value, tail + rounding


# ---------------------------------------------------------------------------
# ODE route (L1 product integration)


def _ode_grid(t_out: np.ndarray, top_order: float, initial_steps: int, substeps: int):
    """Internal nodes with each output time as a node.

    The first output interval ``[0, t_1]`` is graded with exponent
    ``2 / top_order`` (capped at 20, past which the first nodes underflow)
    toward t = 0; later output intervals are split uniformly.
    """
    grading = min(2.0 / top_order, 20.0)
    nodes = [np.zeros(1)]
    idx = np.empty(t_out.size, dtype=np.int64)
    count, prev = 1, 0.0
    for i, t in enumerate(t_out):
        if t == 0.0:
            idx[i] = 0
            continue
        if prev == 0.0:
            seg = t * (np.arange(1, initial_steps + 1) / initial_steps) ** grading
        else:
            seg = prev + (t - prev) * np.arange(1, substeps + 1) / substeps
        seg[-1] = t
        nodes.append(seg)
        count += seg.size
        idx[i] = count - 1
        prev = t
    return np.concatenate(nodes), idx


def _l1_march(lams: np.ndarray, models: Sequence[FractionalModel], nodes: np.ndarray) -> np.ndarray:
    """March the L1 scheme for every model and relaxation rate at once.

    All models share ``nodes``; returns an array of shape (K, J, N+1).
    """
    lams = np.asarray(lams, dtype=float)
    nsteps = nodes.size - 1
    steps = np.diff(nodes)
    powers = sorted({1.0 - a for m in models for a in m.orders if a < 1.0})
    pv = np.array(powers)
    mix = np.zeros((len(models), pv.size))
    classical = np.zeros(len(models))
    for k, m in enumerate(models):
        for a, q in zip(m.orders, m.weights):
            if a < 1.0:
                mix[k, powers.index(1.0 - a)] += q / math.gamma(2.0 - a)
            else:
                classical[k] += q

    y = np.empty((len(models), nsteps + 1, lams.size))
    y[:, 0] = 1.0
    incr = np.empty((len(models), nsteps, lams.size))
    for m in range(1, nsteps + 1):
        if pv.size:
            # a^p - (a-h)^p in a form that survives h << a; the graded
            # steps near t = 0 would otherwise cancel to nothing
            dist = nodes[m] - nodes[:m]
            ratio = steps[:m] / dist
            ratio[-1] = 0.0
            rows = -np.exp(np.outer(pv, np.log(dist))) * np.expm1(np.outer(pv, np.log1p(-ratio)))
            rows[:, -1] = steps[m - 1] ** pv
            rows /= steps[:m]
            row = mix @ rows
        else:
            row = np.zeros((len(models), m))
        row[:, -1] += classical / steps[m - 1]
        diag = row[:, -1:]
        if m > 1 and pv.size:
            hist = np.einsum("km,kmj->kj", row[:, :-1], incr[:, : m - 1])
        else:
            hist = 0.0
        y[:, m] = (diag * y[:, m - 1] - hist) / (diag + lams)
        incr[:, m - 1] = y[:, m] - y[:, m - 1]
    return y.transpose(0, 2, 1)


def frac_ode_solve(
    lams,
    model: FractionalModel | Sequence[FractionalModel],
    t_grid,
    *,
    initial_steps: int = 64,
    substeps: int = 4,
    levels: int = 2,
    grid_order: float | None = None,
):
    """Mode responses by the L1 scheme on a graded grid.

    Returns ``(values, errors)`` of shape ``(len(lams), len(t_grid))``, or with
    a leading model axis when a sequence of models is given; batched models
    share the grid graded for ``grid_order`` (default: the largest top order).
    ``levels=1`` is a single solve with ``errors`` None.  Otherwise the grid is
    halved ``levels - 1`` times and Richardson-extrapolated assuming order
    ``2 - alpha_n``; for two levels ``errors`` is the halving estimate of the
    finer solve, for three the spread between the two extrapolants.
    """
    batch = not isinstance(model, FractionalModel)
    models = list(model) if batch else [model]
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing and non-negative")
    if np.any(lams < 0):
        raise ValueError("relaxation rates must be non-negative")
    if levels not in (1, 2, 3):
        raise ValueError("levels must be 1, 2 or 3")
    top = grid_order if grid_order is not None else max(m.top for m in models)

    def solve(scale: int) -> np.ndarray:
        nodes, idx = _ode_grid(t, top, scale * initial_steps, scale * substeps)
        return _l1_march(lams, models, nodes)[:, :, idx]

    def unbatch(values, errors):
        if batch:
            return values, errors
        return values[0], None if errors is None else errors[0]

    coarse = solve(1)
    if levels == 1:
        return unbatch(coarse, None)
    factor = (2.0 ** (2.0 - np.array([m.top for m in models])) - 1.0)[:, None, None]
    fine = solve(2)
    first = fine + (fine - coarse) / factor
    if levels == 2:
        return unbatch(first, np.abs(fine - coarse) / factor)
    finest = solve(4)
    second = finest + (finest - fine) / factor
    return unbatch(second, np.abs(second - first))


def frac_ode_oracle(lam: float, model: FractionalModel, t_grid, *, tol: float = 1e-6, **grid) -> np.ndarray:
    """Mode response on ``t_grid`` from the L1 discretization.

    Raises StepSizeError when the grid-halving error estimate exceeds ``tol``.
    """
    if grid.get("levels", 2) < 2:
        raise ValueError("the oracle needs levels >= 2 for its error estimate")
    values, err = frac_ode_solve([lam], model, t_grid, **grid)
    worst = float(err.max())
    if worst > tol:
        raise StepSizeError(f"ODE error estimate {worst:.3g} exceeds tolerance {tol:.3g}; refine the grid")
    return values[0]


# ---------------------------------------------------------------------------
# mode response


@dataclass(frozen=True)
class ModeValue:
    value: float
    error: float
    route: str


def _series_viable(params: MLParams, z: np.ndarray, policy: TruncationPolicy) -> bool:
    if np.any(np.abs(z) > policy.series_domain_radius):
        return False
    degree, peak = series_outlook(params, z, policy)
    if degree > policy.max_total_degree:
        return False
    if math.comb(degree + params.n, params.n) > policy.max_terms:
        return False
    return peak * _EPS * 1e3 < 1.0


def eval_mode_detail(
    lam: float, model: FractionalModel, t: float, policy: TruncationPolicy = DEFAULT_POLICY, route: str = "auto"
) -> ModeValue:
    """Mode response with its error estimate and the route that produced it.

    ``route`` is ``"auto"``, ``"series"`` or ``"ode"``. The auto route sums
    the series in double precision and falls back to the ODE when the
    series is out of reach or its error estimate exceeds 1e-8.
    """
    if lam < 0 or t < 0:
        raise ValueError("lambda and t must be non-negative")
    if lam == 0.0 or t == 0.0:
        return ModeValue(1.0, 0.0, "exact")
    params = model.ml_params()
    z = model.ml_arguments(lam, t)
    scale = lam * t**model.top / model.weights[-1]
    if route == "series":
        e, err = eval_multinomial_ml(params, z, policy)
        return ModeValue(1.0 - scale * e, scale * err + _EPS, "series")
    if route == "auto" and _series_viable(params, z, policy):
        try:
            e, err = eval_multinomial_ml(params, z, replace(policy, precision="double"))
        except NonConvergence:
            err = math.inf
        if scale * err <= _AUTO_SERIES_TOL:
            return ModeValue(1.0 - scale * e, scale * err + _EPS, "series")
    values, errs = frac_ode_solve([lam], model, [t])
    return ModeValue(float(values[0, 0]), float(errs[0, 0]), "ode")


def eval_mode(lam: float, model: FractionalModel, t: float, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """u_lam(t) = 1 - (lam/q_n) t^{a_n} E_{(a_n, a_n-a_1, ...), 1+a_n}(-(lam/q_n) t^{a_n}, ...).

    The 1/q_n factor follows from inverting ``1/(s (w(s) + lam))`` term by
    term; it is invisible when q_n = 1.
    """
    return eval_mode_detail(lam, model, t, policy).value


def mode_responses(
    lams,
    model: FractionalModel | Sequence[FractionalModel],
    times,
    *,
    initial_steps: int = 64,
    substeps: int = 2,
    levels: int = 2,
    estimate_error: bool = False,
    grid_order: float | None = None,
):
    """(mode x time) table of responses for the forward model.

    Every positive rate goes through one batched L1 march so that the table
    is a smooth function of the model parameters; zero rates are exactly 1.
    A sequence of models adds a leading axis and shares one grid.
    Returns ``(values, errors)``; ``errors`` is None unless requested.
    """
    batch = not isinstance(model, FractionalModel)
    count = len(model) if batch else 1
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    times = np.asarray(times, dtype=float)
    values = np.ones((count, lams.size, times.size))
    errors = np.zeros_like(values) if estimate_error else None
    live = lams > 0
    if np.any(live):
        models = list(model) if batch else [model]
        v, e = frac_ode_solve(
            lams[live], models, times, initial_steps=initial_steps, substeps=substeps, levels=levels, grid_order=grid_order
        )
        values[:, live] = v
        if estimate_error:
            if e is None:
                raise ValueError("error estimates need levels >= 2")
            errors[:, live] = e
    if batch:
        return values, errors
    return values[0], None if errors is None else errors[0]
