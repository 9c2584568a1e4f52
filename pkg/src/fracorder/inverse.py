"""Recover the number, orders and weights of the fractional terms from one trace."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w
from scipy.optimize import brentq, least_squares, nnls

from .errors import (
    AllFitsFailed,
    DegenerateOrderError,
    FracOrderError,
    MaxIterError,
    NoiseFloorError,
    RadiusError,
    WindowError,
)
from .forward import ForwardConfig, TraceSeries, solve_trace_delta, solve_trace_l2, trace_from_weights
from .laplace import PowerCoeffs, modal_series, numerical_laplace
from .mlf import FractionalModel
from .spectral import NEUMANN, EigenSystem, ModalWeights

RESULT_HEADER = "# fracorder-result v1"
ORDER_BOX = (0.01, 0.99)
# log-weight range; outside it a term is numerically absent or all-dominant
LOGQ_BOX = (-30.0, 30.0)


@dataclass(frozen=True)
class LsqConfig:
    """Damped Gauss-Newton controls; ``residual_tol`` is relative to ``max |trace|``."""

    max_iter: int = 60
    step_tol: float = 1e-10
    residual_tol: float = 1e-9
    damping_init: float = 1e-3


@dataclass(frozen=True)
class IdentificationConfig:
    """Controls for peeling, refinement and order selection.

    ``eta_grid`` defaults to 40 points from ``min(10, 0.05/t0)`` down to
    ``2.5/T`` of the trace window.
    """

    n_max: int = 4
    eta_grid: tuple[float, ...] | None = None
    lsq: LsqConfig = field(default_factory=LsqConfig)
    residual_drop_threshold: float = 0.3
    seed: int = 0
    forward: ForwardConfig = field(default_factory=ForwardConfig)

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if not 0 < self.residual_drop_threshold < 1:
            raise ValueError("residual_drop_threshold must lie in (0, 1)")
        if self.eta_grid is not None:
            grid = np.asarray(self.eta_grid, dtype=float)
            if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
                raise ValueError("eta_grid must be positive and decreasing")

    def etas_for(self, trace: TraceSeries) -> np.ndarray:
        if self.eta_grid is not None:
            return np.asarray(self.eta_grid, dtype=float)
        t0, T = trace.window
        return np.geomspace(min(10.0, 0.05 / t0), 2.5 / T, 40)


@dataclass
class IdentificationResult:
    n: int
    orders: tuple[float, ...]
    weights: tuple[float, ...]
    residual: float
    per_parameter_sensitivity: tuple[float, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def model(self) -> FractionalModel:
        return FractionalModel(self.orders, self.weights)


@dataclass
class PeelResult:
    """Peeled terms in discovery order plus the jointly polished fit for each count."""

    pairs: list[tuple[float, float]]
    fits: dict[int, FractionalModel]
    log: list[str]


# ---------------------------------------------------------------------------
# peeling


def _fmt(values) -> str:
    return "[" + ", ".join(f"{float(v):.6g}" for v in values) + "]"


def _invert_series(weights: ModalWeights, targets: np.ndarray) -> np.ndarray:
    """Solve ``Phi(w) = target`` on the increasing branch of ``Phi``; NaN where impossible."""
    out = np.full(targets.shape, np.nan)
    base = modal_series(weights, 0.0)
    for i, target in enumerate(targets):
        if not target > base:
            continue
        hi = 1.0
        for _ in range(200):
            if modal_series(weights, hi) > target:
                break
            hi *= 2.0
        else:
            continue
        out[i] = brentq(lambda w: modal_series(weights, w) - target, 0.0, hi, xtol=1e-300, rtol=1e-15)
    return out


def _series_slope(weights: ModalWeights, w: np.ndarray) -> np.ndarray:
    lams = weights.lambdas
    return (lams / (w[:, None] + lams) ** 2) @ weights.rhos


def _log_model(params: np.ndarray, log_eta: np.ndarray) -> np.ndarray:
    n = params.size // 2
    alphas, logq = params[:n], params[n:]
    return np.log(np.exp(logq[None, :] + alphas[None, :] * log_eta[:, None]).sum(axis=1))


def _polish(alphas, qs, log_eta, log_w, sigma=None):
    """Joint fit of ``log sum q_i eta^a_i`` to the recovered symbol.

    ``sigma`` holds per-point uncertainties of ``log_w``; the returned rms is
    unweighted.
    """
    x0 = np.r_[np.clip(alphas, *ORDER_BOX), np.log(qs)]
    n = len(alphas)
    lo = np.r_[np.full(n, ORDER_BOX[0]), np.full(n, -40.0)]
    hi = np.r_[np.full(n, ORDER_BOX[1]), np.full(n, 40.0)]
    scale = np.ones_like(log_w) if sigma is None else sigma / np.median(sigma)
    fit = least_squares(lambda p: (_log_model(p, log_eta) - log_w) / scale, x0, bounds=(lo, hi), method="trf", x_scale="jac")
    order = np.argsort(fit.x[:n])
    rms = float(np.sqrt(np.mean((fit.fun * scale) ** 2)))
    return fit.x[:n][order], np.exp(fit.x[n:][order]), rms


def _rank_starts(starts, eta, w):
    """Order candidate exponent sets by their best non-negative weight fit."""
    scored = []
    for alphas in starts:
        alphas = np.sort(np.clip(alphas, *ORDER_BOX))
        if np.min(np.diff(alphas), initial=1.0) < 0.02:
            continue
        basis = eta[:, None] ** alphas[None, :] / w[:, None]
        qs, _ = nnls(basis, np.ones_like(w))
        if np.any(qs <= 0):
            continue
        cost = float(np.sum(np.log(basis @ qs) ** 2))
        scored.append((cost, alphas, qs))
    scored.sort(key=lambda item: item[0])
    return [(a, q) for _, a, q in scored]


def peel_orders(
    trace: TraceSeries,
    weights: ModalWeights,
    pcoeffs: PowerCoeffs | None,
    cfg: IdentificationConfig = IdentificationConfig(),
) -> PeelResult:
    """Initial (order, weight) pairs from the small-eta behavior of the transformed trace.

    ``eta L[g](eta) = Phi(w(eta))`` with ``Phi(w) = sum rho_j w / (w + lam_j)``.
    Inverting ``Phi`` on its increasing branch removes every composite power
    ``p_k w^k`` at once and leaves the symbol ``w(eta) = sum q_i eta^a_i``.
    Terms are then peeled one at a time: the leading exponent comes from the
    log-log slope over the smallest decade of eta, and each later exponent
    from the slope of what the identified terms leave unexplained.  After
    each new term the whole symbol is refitted jointly.
    """
    etas = cfg.etas_for(trace)
    est = numerical_laplace(trace, etas)
    phi = etas * est.values
    phi_bias = etas * est.bias
    w = _invert_series(weights, phi)
    ok = np.isfinite(w) & (w > 0)
    if ok.sum() < 4:
        raise NoiseFloorError("the transformed trace carries no recoverable signal")
    slope = _series_slope(weights, np.where(ok, w, 1.0))
    w_err = np.where(ok & (slope > 0), phi_bias / np.where(slope > 0, slope, 1.0), np.inf)
    keep = ok & (w_err < 0.1 * np.where(ok, w, 1.0))
    log = [f"transform points: {etas.size}, usable: {int(keep.sum())}"]
    if pcoeffs is not None:
        beyond = keep & (w >= pcoeffs.lambda_min)
        if beyond.all():
            raise RadiusError("recovered symbol exceeds the expansion radius at every point")
    if keep.sum() < 4:
        raise NoiseFloorError("fewer than four transform points resolve the symbol")

    eta_k, w_k = etas[keep], w[keep]
    log_eta, log_w = np.log(eta_k), np.log(w_k)
    small = log_eta <= log_eta.min() + math.log(10.0)
    if small.sum() < 3:
        small = np.argsort(log_eta)[:3]
    coef = np.polyfit(log_eta[small], log_w[small], 1)
    pred = np.polyval(coef, log_eta[small])
    ss_tot = float(np.sum((log_w[small] - log_w[small].mean()) ** 2))
    r2 = 1.0 - float(np.sum((log_w[small] - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    if not r2 >= 0.99 or not coef[0] > 0:
        raise NoiseFloorError(f"leading exponent fit has R^2 = {r2:.4f}")
    alpha1, q1 = float(np.clip(coef[0], *ORDER_BOX)), float(math.exp(coef[1]))
    if pcoeffs is not None:
        log.append(f"p1 = {float(pcoeffs.pks[0]):.6g}; leading coefficient {float(pcoeffs.pks[0]) * q1:.6g}")
    log.append(f"term 1: slope {alpha1:.6g}, weight {q1:.6g}, R^2 {r2:.6f}")

    alphas, qs, rms = _polish([alpha1], [q1], log_eta, log_w)
    fits = {1: FractionalModel.from_pairs(alphas, qs)}
    pairs = [(alpha1, q1)]
    floor = float(np.median(w_err[keep] / w_k))
    log.append(f"n=1 polished: orders {_fmt(alphas)}, rms {rms:.3g}, floor {floor:.3g}")

    for n in range(2, cfg.n_max + 1):
        if rms <= max(floor, 1e-12):
            log.append(f"stop: symbol residual {rms:.3g} at the noise floor")
            break
        resid = w_k - np.exp(_log_model(np.r_[alphas, np.log(qs)], log_eta))
        pos = resid > 0
        starts = []
        if pos.sum() >= 3:
            idx = np.argsort(log_eta[pos])[: max(3, int(pos.sum()) // 2)]
            c = np.polyfit(log_eta[pos][idx], np.log(resid[pos][idx]), 1)
            a_new = float(np.clip(c[0], *ORDER_BOX))
            q_new = float(math.exp(c[1]))
            pairs.append((a_new, q_new))
            log.append(f"term {n}: residual slope {a_new:.6g}, weight {q_new:.6g}")
            starts.append(np.r_[alphas, a_new])
        starts.extend(np.r_[alphas, a] for a in np.linspace(0.05, 0.95, 10))
        starts.extend(np.array(c) for c in itertools.combinations(np.linspace(0.1, 0.9, 9), n))
        best = None
        for start in _rank_starts(starts, eta_k, w_k)[:6]:
            cand = _polish(*start, log_eta, log_w)
            if np.min(np.diff(cand[0])) < 1e-3:
                continue
            if best is None or cand[2] < best[2]:
                best = cand
        if best is None:
            log.append(f"n={n}: no admissible new term")
            break
        alphas, qs, rms = best
        fits[n] = FractionalModel.from_pairs(alphas, qs)
        log.append(f"n={n} polished: orders {_fmt(alphas)}, weights {_fmt(qs)}, rms {rms:.3g}")
    return PeelResult(pairs, fits, log)


# ---------------------------------------------------------------------------
# refinement


def _unpack(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = theta.size // 2
    alphas = np.clip(theta[:n], *ORDER_BOX)
    order = np.argsort(alphas)
    return alphas[order], np.clip(theta[n:], *LOGQ_BOX)[order]


def _model_of(theta: np.ndarray, exact: bool = False) -> FractionalModel:
    """Model for a parameter vector; ``exact`` keeps orders unclipped (finite-difference probes)."""
    n = theta.size // 2
    if exact:
        order = np.argsort(theta[:n])
        alphas, logq = theta[:n][order], np.clip(theta[n:], *LOGQ_BOX)[order]
    else:
        alphas, logq = _unpack(theta)
    if np.any(np.diff(alphas) <= 0):
        alphas = alphas + np.arange(alphas.size) * 1e-12
    return FractionalModel(tuple(map(float, alphas)), tuple(map(float, np.exp(logq))))


def _forward(theta, weights, times, fcfg) -> np.ndarray:
    return trace_from_weights(weights, _model_of(theta), times, fcfg)


def refine_lsq(
    trace: TraceSeries,
    weights: ModalWeights,
    init: FractionalModel | tuple,
    eigs: EigenSystem | None = None,
    cfg: IdentificationConfig = IdentificationConfig(),
) -> IdentificationResult:
    """Levenberg-Marquardt least squares over ``(alpha, log q)``.

    Jacobians are central differences with relative step 1e-5.  Orders are
    projected onto ``[0.01, 0.99]`` and re-sorted with their weights after
    every step.  ``eigs`` is accepted for interface symmetry; the weights
    already carry the spectrum.
    """
    if not isinstance(init, FractionalModel):
        init = FractionalModel.from_pairs(*init)
    if any(not ORDER_BOX[0] <= a <= ORDER_BOX[1] for a in init.orders):
        init = FractionalModel.from_pairs(np.clip(init.orders, *ORDER_BOX), init.weights)
    lsq = cfg.lsq
    g = trace.values
    scale = float(np.max(np.abs(g))) or 1.0
    norm = scale * math.sqrt(g.size)
    fcfg = cfg.forward

    def residual(theta):
        return (_forward(theta, weights, trace.times, fcfg) - g) / norm

    def jacobian(theta):
        # the grid is graded by the top order, so its probes get their own
        # grids; every other probe shares the grid of theta
        n = theta.size // 2
        top_index = int(np.argmax(theta[:n]))
        shifted, steps = [], []
        cols = {}
        for i in range(theta.size):
            h = 1e-5 * max(abs(theta[i]), 1.0)
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            steps.append(h)
            if i == top_index:
                cols[i] = (residual(up) - residual(dn)) / (2 * h)
            else:
                shifted += [_model_of(up, exact=True), _model_of(dn, exact=True)]
        traces = iter(trace_from_weights(weights, shifted, trace.times, fcfg, grid_order=float(theta[top_index])) / norm)
        for i, h in enumerate(steps):
            if i not in cols:
                cols[i] = (next(traces) - next(traces)) / (2 * h)
        return np.column_stack([cols[i] for i in range(theta.size)])

    theta = np.r_[init.orders, np.log(init.weights)]
    r = residual(theta)
    cost = float(r @ r)
    mu = None
    nu = 2.0
    converged = False
    history = [math.sqrt(cost)]
    it = 0
    jac = None
    for it in range(1, lsq.max_iter + 1):
        if math.sqrt(cost) <= lsq.residual_tol:
            converged = True
            break
        jac = jacobian(theta)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-30)
        if mu is None:
            mu = lsq.damping_init
        accepted = False
        while mu < 1e12:
            system = jtj + mu * np.diag(diag)
            vel = np.linalg.solve(system, -grad)
            # geodesic acceleration: second-order correction along the step,
            # which keeps the iteration moving in curved narrow valleys
            probe = residual(theta + 0.1 * vel)
            curvature = 20.0 * ((probe - r) / 0.1 - jac @ vel)
            acc = np.linalg.solve(system, -jac.T @ curvature)
            scaled_vel = float(np.linalg.norm(np.sqrt(diag) * vel))
            if 2.0 * float(np.linalg.norm(np.sqrt(diag) * acc)) > 0.75 * scaled_vel:
                mu *= nu
                nu *= 2.0
                continue
            trial = theta + vel + 0.5 * acc
            n = trial.size // 2
            trial[:n] = np.clip(trial[:n], *ORDER_BOX)
            alphas, logq = _unpack(trial)
            trial = np.r_[alphas, logq]
            r_trial = residual(trial)
            c_trial = float(r_trial @ r_trial)
            predicted = -2.0 * float(vel @ grad) - float(vel @ jtj @ vel)
            if c_trial < cost:
                gain = (cost - c_trial) / predicted if predicted > 0 else 1.0
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * min(gain, 1.0) - 1.0) ** 3)
                nu = 2.0
                accepted = True
                break
            mu *= nu
            nu *= 2.0
        if not accepted:
            converged = True
            break
        moved = float(np.linalg.norm(trial - theta))
        theta, r, cost = trial, r_trial, c_trial
        history.append(math.sqrt(cost))
        mu = max(mu, 1e-12)
        alphas = theta[: theta.size // 2]
        if alphas.size > 1 and np.min(np.diff(alphas)) < 1e-4:
            raise DegenerateOrderError(f"orders collapsed to {list(map(float, alphas))}")
        if moved < lsq.step_tol * (1.0 + float(np.linalg.norm(theta))):
            converged = True
            break
    else:
        if math.sqrt(cost) <= lsq.residual_tol:
            converged = True
    if jac is None:
        jac = jacobian(theta)
    model = _model_of(theta)
    rms = math.sqrt(cost) * scale
    sens = tuple(float(v) for v in np.diag(jac.T @ jac) * (norm / scale) ** 2 / g.size)
    diagnostics = {"iterations": it, "relative_residual": math.sqrt(cost), "history": history}
    result = IdentificationResult(model.n, model.orders, model.weights, rms, sens, diagnostics)
    if not converged:
        raise MaxIterError(f"no convergence after {lsq.max_iter} iterations (relative residual {math.sqrt(cost):.3g})", result)
    return result


# ---------------------------------------------------------------------------
# order selection


def _grid_init(n: int, trace: TraceSeries, weights: ModalWeights, fcfg: ForwardConfig) -> FractionalModel:
    """Best unit-weight model over a coarse lattice of orders."""
    combos = list(itertools.combinations(np.linspace(0.1, 0.9, 9), n))
    models = [FractionalModel(tuple(map(float, c)), (1.0,) * n) for c in combos]
    traces = trace_from_weights(weights, models, trace.times, fcfg, grid_order=0.9)
    costs = np.sum((traces - trace.values) ** 2, axis=1)
    return models[int(np.argmin(costs))]


def select_order(
    trace: TraceSeries,
    weights: ModalWeights,
    eigs: EigenSystem | None = None,
    cfg: IdentificationConfig = IdentificationConfig(),
    pcoeffs: PowerCoeffs | None = None,
) -> IdentificationResult:
    """Fit n = 1, 2, ... and keep the smallest n that the next one cannot beat.

    A larger model is accepted only when it cuts the residual below
    ``residual_drop_threshold`` times the current one.  The search stops as
    soon as a fit reaches ``residual_tol``, when a larger model fails to fit,
    or when it brings no such improvement.
    """
    log: list[str] = []
    fits: dict[int, FractionalModel] = {}
    try:
        peel = peel_orders(trace, weights, pcoeffs, cfg)
        fits = peel.fits
        log.extend(peel.log)
    except (NoiseFloorError, RadiusError, WindowError) as exc:
        log.append(f"peeling unavailable ({type(exc).__name__}: {exc}); grid initialization")

    scale = float(np.max(np.abs(trace.values))) or 1.0
    candidates: dict[int, dict] = {}
    results: dict[int, IdentificationResult] = {}
    chosen: IdentificationResult | None = None
    for n in range(1, cfg.n_max + 1):
        init = fits.get(n)
        source = "peel"
        if init is None:
            init, source = _grid_init(n, trace, weights, cfg.forward), "grid"
        status = "ok"
        try:
            res = refine_lsq(trace, weights, init, None, cfg)
        except MaxIterError as exc:
            # an unconverged fit still competes with its last iterate
            if exc.result is None:
                raise
            res, status = exc.result, "max_iter"
            log.append(f"n={n}: {exc}")
        except FracOrderError as exc:
            candidates[n] = {"status": type(exc).__name__, "message": str(exc), "init": source}
            log.append(f"n={n}: {type(exc).__name__}: {exc}")
            if chosen is not None:
                break
            continue
        results[n] = res
        candidates[n] = {"status": status, "residual": res.residual, "init": source}
        log.append(f"n={n}: residual {res.residual:.6g} from {source} start")
        if chosen is None:
            chosen = res
        elif res.residual < cfg.residual_drop_threshold * chosen.residual:
            chosen = res
        else:
            break
        if res.residual <= cfg.lsq.residual_tol * scale:
            break
    if chosen is None:
        raise AllFitsFailed("; ".join(f"n={k}: {v['message']}" for k, v in candidates.items()))
    warnings = []
    if chosen.residual > 0.05 * scale:
        warnings.append("poor_fit")
    if not fits:
        warnings.append("peeling_failed")
    if candidates[chosen.n]["status"] == "max_iter":
        warnings.append("not_converged")
    chosen.diagnostics.update({"candidates": candidates, "peeling": log, "warnings": warnings})
    return chosen


def identify(trace: TraceSeries, weights: ModalWeights, eigs: EigenSystem | None = None, cfg=IdentificationConfig()):
    """Order selection with weights truncated to the modes the trace was built from."""
    modes = trace.meta.get("modes")
    if modes is not None:
        weights = weights.truncated(int(modes))
    pcoeffs = None
    if np.all(weights.lambdas > 0):
        from .laplace import compute_pk

        try:
            pcoeffs = compute_pk(weights)
        except FracOrderError:
            pcoeffs = None
    return select_order(trace, weights, eigs, cfg, pcoeffs)


def synthesize(
    model: FractionalModel,
    eigs: EigenSystem,
    weights: ModalWeights | None,
    noise_level: float,
    seed: int,
    cfg: ForwardConfig = ForwardConfig(),
) -> TraceSeries:
    """Forward trace plus Gaussian noise of standard deviation ``noise_level * max|trace|``.

    ``weights=None`` selects point-mass data on a Neumann eigensystem.
    """
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    model = FractionalModel.from_pairs(model.orders, model.weights)
    if weights is None:
        if eigs.bc != NEUMANN:
            raise ValueError("point-mass data need a Neumann eigensystem")
        trace = solve_trace_delta(eigs, model, cfg)
    else:
        trace = solve_trace_l2(eigs, weights, model, cfg)
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        sigma = noise_level * float(np.max(np.abs(trace.values)))
        trace.values = trace.values + rng.normal(0.0, sigma, trace.values.size)
    trace.meta.update({"noise_level": float(noise_level), "seed": int(seed)})
    return trace


# ---------------------------------------------------------------------------
# result document


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def config_dict(cfg: IdentificationConfig) -> dict:
    out = asdict(cfg)
    if out["eta_grid"] is not None:
        out["eta_grid"] = list(out["eta_grid"])
    return _plain(out)


def write_result(result: IdentificationResult, path, cfg: IdentificationConfig | None = None, echo: dict | None = None) -> None:
    """Write a result as a TOML document behind the versioned header.

    ``cfg`` is echoed under ``config`` and ``echo`` (any TOML-ready mapping,
    such as the run configuration) under ``run``.
    """
    doc = {
        "n": result.n,
        "orders": list(result.orders),
        "weights": list(result.weights),
        "residual": result.residual,
        "per_parameter_sensitivity": list(result.per_parameter_sensitivity),
        "diagnostics": _plain(result.diagnostics),
    }
    if cfg is not None:
        doc["config"] = config_dict(cfg)
    if echo is not None:
        doc["run"] = _plain(echo)
    Path(path).write_text(RESULT_HEADER + "\n" + tomli_w.dumps(doc))


def read_result(path) -> IdentificationResult:
    text = Path(path).read_text()
    if not text.startswith(RESULT_HEADER):
        raise ValueError(f"{path}: missing {RESULT_HEADER!r} header")
    doc = tomli.loads(text)
    return IdentificationResult(
        int(doc["n"]),
        tuple(doc["orders"]),
        tuple(doc["weights"]),
        float(doc["residual"]),
        tuple(doc.get("per_parameter_sensitivity", ())),
        doc.get("diagnostics", {}),
    )
