"""Eigenfunction-series solutions and the pointwise observation trace."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssumptionWarning, TailError
from .mlf import FractionalModel, mode_responses
from .spectral import DIRICHLET, NEUMANN, EigenSystem, ModalWeights

TRACE_HEADER = "# fracorder-trace v1"


@dataclass(frozen=True)
class TimeGrid:
    """Observation times on ``[t0, T]``, geometric by default."""

    t0: float = 1e-2
    T: float = 10.0
    count: int = 100
    spacing: str = "geometric"

    def __post_init__(self) -> None:
        if not 0 < self.t0 < self.T:
            raise ValueError(f"need 0 < t0 < T, got t0={self.t0}, T={self.T}")
        if self.count < 2:
            raise ValueError("a time grid needs at least two samples")
        if self.spacing not in ("geometric", "linear"):
            raise ValueError(f"unknown spacing {self.spacing!r}")

    def times(self) -> np.ndarray:
        if self.spacing == "geometric":
            return np.geomspace(self.t0, self.T, self.count)
        return np.linspace(self.t0, self.T, self.count)


@dataclass(frozen=True)
class ForwardConfig:
    """Mode truncation and time-integration controls.

    A mode count is admissible when the analytic tail bound at ``t0`` is
    below ``mode_tail_tol``, or failing that when halving the retained
    modes changes the trace by less than ``mode_tail_tol``.
    """

    mode_count: int = 200
    mode_tail_tol: float = 1e-2
    time_grid: TimeGrid = field(default_factory=TimeGrid)
    ode_initial_steps: int = 64
    ode_substeps: int = 2
    ode_levels: int = 2
    estimate_error: bool = False

    def __post_init__(self) -> None:
        if self.mode_count < 1:
            raise ValueError("mode_count must be at least 1")
        if not self.mode_tail_tol > 0:
            raise ValueError("mode_tail_tol must be positive")
        if self.ode_levels not in (1, 2, 3):
            raise ValueError("ode_levels must be 1, 2 or 3")
        if self.estimate_error and self.ode_levels < 2:
            raise ValueError("error estimates need ode_levels >= 2")


@dataclass
class TraceSeries:
    """Sampled observation ``u(x0, t_i)`` on a window ``(t0, T)``."""

    times: np.ndarray
    values: np.ndarray
    x0: object = 0.0
    window: tuple[float, float] | None = None
    errors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if self.times.size < 2:
            raise ValueError("a trace needs at least two samples")
        if self.times[0] <= 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be positive and strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")
        if self.errors is not None:
            self.errors = np.asarray(self.errors, dtype=float)
        if self.window is None:
            self.window = (float(self.times[0]), float(self.times[-1]))

    def __len__(self) -> int:
        return int(self.times.size)


# ---------------------------------------------------------------------------
# truncation


def _mode_envelope(model: FractionalModel, lams: np.ndarray, t0: float) -> np.ndarray:
    an = model.top
    spread = sum(t0 ** (an - a) for a in model.orders[:-1]) + 1.0
    scale = max(1.0, max(model.weights))
    return scale * spread / (1.0 + lams * t0**an)


def _tail_bounds(rhos: np.ndarray, lams: np.ndarray, dim: int, model: FractionalModel, t0: float) -> np.ndarray:
    """Tail bound for every truncation J = 0..M (index J)."""
    size = rhos.size
    terms = np.abs(rhos) * _mode_envelope(model, lams, t0)
    inside = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]])

    j = np.arange(1, size + 1, dtype=float)
    expo = 2.0 / dim
    positive = lams > 0
    c0 = float(np.min(lams[positive] / j[positive] ** expo)) if np.any(positive) else 0.0
    upper = slice(size // 2, None)
    env = np.maximum.accumulate(np.abs(rhos)[::-1])[::-1][upper]
    if np.all(env == 0):
        return inside
    if c0 <= 0 or size < 4:
        return inside + math.inf
    nz = env > 0
    decay = -np.polyfit(np.log(j[upper][nz]), np.log(env[nz]), 1)[0] if nz.sum() > 1 else 0.0
    decay = max(decay, 0.0)
    amp = float(np.max(env[nz] * j[upper][nz] ** decay))
    power = decay + expo - 1.0
    if power <= 0:
        return inside + math.inf
    spread = sum(t0 ** (model.top - a) for a in model.orders[:-1]) + 1.0
    scale = max(1.0, max(model.weights))
    beyond = amp * scale * spread / (c0 * t0**model.top) * size ** (-power) / power
    return inside + beyond


def truncation_bound(eigs: EigenSystem, model: FractionalModel, J: int, t0: float, weights: ModalWeights | None = None) -> float:
    """Upper bound on the discarded tail ``sum_{j>J} |w_j| |u_j(t)|`` for ``t >= t0``.

    Each discarded mode is bounded by
    ``max(1, max q) * (sum_{i<n} t0^(a_n-a_i) + 1) / (1 + lam_j t0^a_n)``.
    Modes past the computed spectrum are covered by extrapolating
    ``lam_j >= C0 j^(2/d)`` (``C0`` fitted from the spectrum) and a power-law
    envelope of the weights.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    rhos = eigs.sigmas if weights is None else weights.rhos
    lams = eigs.lambdas if weights is None else weights.lambdas
    bounds = _tail_bounds(np.asarray(rhos), np.asarray(lams), eigs.dim, model, t0)
    return float(bounds[min(J, rhos.size)])


# ---------------------------------------------------------------------------
# traces


def _trace_values(rhos, lams, model, times, cfg: ForwardConfig, estimate_error: bool):
    values, errs = mode_responses(
        lams,
        model,
        times,
        initial_steps=cfg.ode_initial_steps,
        substeps=cfg.ode_substeps,
        levels=cfg.ode_levels,
        estimate_error=estimate_error,
    )
    trace = np.sum(rhos[:, None] * values, axis=0)
    err = None if errs is None else np.sum(np.abs(rhos)[:, None] * errs, axis=0)
    return trace, err, values


def trace_from_weights(weights: ModalWeights, model, times, cfg: ForwardConfig = ForwardConfig(), *, grid_order=None) -> np.ndarray:
    """``sum_j rho_j u_j(t)`` over all given modes, without truncation checks.

    ``model`` may be a sequence of models, which are marched together on one
    grid and give one trace per row.
    """
    values, _ = mode_responses(
        weights.lambdas,
        model,
        np.asarray(times, dtype=float),
        initial_steps=cfg.ode_initial_steps,
        substeps=cfg.ode_substeps,
        levels=cfg.ode_levels,
        grid_order=grid_order,
    )
    return np.sum(weights.rhos[:, None] * values, axis=-2)


def _solve(weights: ModalWeights, dim: int, model: FractionalModel, cfg: ForwardConfig, x0, meta: dict) -> TraceSeries:
    times = cfg.time_grid.times()
    t0 = float(times[0])
    available = min(cfg.mode_count, len(weights))
    bounds = _tail_bounds(weights.rhos, weights.lambdas, dim, model, t0)
    admissible = np.nonzero(bounds[1 : available + 1] <= cfg.mode_tail_tol)[0]
    rhos, lams = weights.rhos, weights.lambdas
    if admissible.size:
        J = int(admissible[0]) + 1
        trace, err, _ = _trace_values(rhos[:J], lams[:J], model, times, cfg, cfg.estimate_error)
        tail = float(bounds[J])
        check = "analytic"
    else:
        J = available
        trace, err, table = _trace_values(rhos[:J], lams[:J], model, times, cfg, cfg.estimate_error)
        half = max(J // 2, 1)
        tail = float(np.max(np.abs(np.sum(rhos[half:J, None] * table[half:], axis=0)))) if J > 1 else math.inf
        if not tail <= cfg.mode_tail_tol:
            raise TailError(
                f"{J} modes leave a tail of {tail:.3g} (analytic bound {bounds[J]:.3g}) "
                f"above tolerance {cfg.mode_tail_tol:g} at t0={t0:g}"
            )
        check = "empirical"
    if err is not None:
        err = err + tail
    meta = dict(meta)
    meta.update(
        {
            "model.orders": list(model.orders),
            "model.weights": list(model.weights),
            "modes": J,
            "tail_estimate": tail,
            "tail_check": check,
        }
    )
    return TraceSeries(times, trace, x0, (t0, float(times[-1])), err, meta)


def solve_trace_delta(eigs: EigenSystem, model: FractionalModel, cfg: ForwardConfig = ForwardConfig()) -> TraceSeries:
    """Trace ``u(0, t)`` for a point mass at x = 0 under Neumann conditions.

    ``u(0, t) = sum_j sigma_j u_j(t)`` since every eigenfunction equals one at
    the observation point.
    """
    if eigs.bc != NEUMANN or eigs.dim != 1:
        raise ValueError("Dirac data need a 1-D Neumann eigensystem")
    if not np.allclose(eigs.phis[:, 0], 1.0):
        raise ValueError("eigenfunctions must be normalized to phi_k(0) = 1")
    weights = ModalWeights(eigs.sigmas, eigs.lambdas)
    return _solve(weights, 1, model, cfg, 0.0, {"data": "dirac"})


def solve_trace_l2(
    eigs: EigenSystem,
    weights: ModalWeights,
    model: FractionalModel,
    cfg: ForwardConfig = ForwardConfig(),
    *,
    x0=None,
    initial_data: np.ndarray | None = None,
) -> TraceSeries:
    """Trace ``u(x0, t) = sum_j rho_j u_j(t)`` for square-integrable initial data.

    Pass ``initial_data`` to have its sign checked: negative samples void the
    identifiability guarantee and raise an AssumptionWarning.
    """
    if eigs.bc != DIRICHLET:
        raise ValueError("square-integrable initial data need a Dirichlet eigensystem")
    if initial_data is not None:
        a = np.asarray(initial_data, dtype=float)
        if np.any(a < 0):
            warnings.warn("initial data take negative values; identification may fail", AssumptionWarning, stacklevel=2)
        if not np.any(a > 0):
            warnings.warn("initial data vanish identically", AssumptionWarning, stacklevel=2)
    return _solve(weights, eigs.dim, model, cfg, x0, {"data": "l2"})


# ---------------------------------------------------------------------------
# CSV


def _format_meta(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_meta(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace(trace: TraceSeries, path) -> None:
    """Write a trace as ``t,value`` CSV behind the versioned header."""
    lines = [TRACE_HEADER]
    x0 = trace.x0
    lines.append(f"# x0={_format_meta(list(np.atleast_1d(x0).astype(float)) if np.ndim(x0) else float(x0 or 0.0))}")
    for key in sorted(trace.meta):
        lines.append(f"# {key}={_format_meta(trace.meta[key])}")
    lines.append("t,value")
    for t, v in zip(trace.times, trace.values):
        lines.append(f"{float(t)!r},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path, *, min_rows: int = 4) -> TraceSeries:
    """Parse a trace CSV; raises ValueError on any format violation."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != TRACE_HEADER:
        raise ValueError(f"{path}: missing {TRACE_HEADER!r} header")
    meta: dict[str, str] = {}
    rows: list[tuple[float, float]] = []
    seen_columns = False
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        if not seen_columns:
            if line.replace(" ", "") != "t,value":
                raise ValueError(f"{path}:{lineno}: expected column header 't,value'")
            seen_columns = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two columns")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < min_rows:
        raise ValueError(f"{path}: {len(rows)} data rows, at least {min_rows} required")
    data = np.array(rows)
    x0_text = meta.pop("x0", "0.0").strip("[]")
    x0_vals = [float(v) for v in x0_text.split(",") if v.strip()] or [0.0]
    x0 = x0_vals[0] if len(x0_vals) == 1 else tuple(x0_vals)
    return TraceSeries(data[:, 0], data[:, 1], x0, None, None, meta)
