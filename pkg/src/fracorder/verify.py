"""Named invariant suites run by ``fracorder verify``.

Every suite is deterministic (fixed seeds) and returns a list of checks; a
suite passes when every check does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erfcx

from .errors import DomainError, NonConvergence
from .forward import ForwardConfig, TimeGrid, solve_trace_l2
from .inverse import IdentificationConfig, identify, synthesize
from .laplace import SymbolW, compute_pk, numerical_laplace, observation_transform, separation_scan
from .mlf import FractionalModel, MLParams, eval_mode_detail, eval_multinomial_ml
from .spectral import (
    DIRICHLET,
    NEUMANN,
    ConstantCoefficientSpec,
    SturmLiouvilleProblem,
    closed_form_eigs,
    project_initial_data,
    solve_eigs_fd,
    weyl_check,
)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_model(rng: np.random.Generator, n: int | None = None, gap: float = 0.0, lo: float = 0.1, hi: float = 0.95) -> FractionalModel:
    """Orders uniform on ``[lo, hi]`` with pairwise gaps of at least ``gap``; weights log-uniform on [1/e, e]."""
    n = int(rng.integers(1, 4)) if n is None else n
    while True:
        orders = np.sort(rng.uniform(lo, hi, n))
        if n == 1 or np.min(np.diff(orders)) >= max(gap, 1e-3):
            break
    weights = np.exp(rng.uniform(-1.0, 1.0, n))
    return FractionalModel(tuple(orders), tuple(weights))


def unit_interval_data(modes: int = 60):
    """Dirichlet Laplacian on (0, 1) with data ``x (1 - x)`` observed at the midpoint."""
    eigs = closed_form_eigs(ConstantCoefficientSpec((1.0,), bc=DIRICHLET), modes)
    return eigs, project_initial_data(eigs, eigs.mesh * (1.0 - eigs.mesh), 0.5)


# ---------------------------------------------------------------------------
# suites


def suite_mlf() -> list[Check]:
    checks = []
    worst = 0.0
    for alpha in (0.25, 0.5, 0.75, 1.0):
        for lam in np.geomspace(0.1, 10.0, 5):
            t_max = (2.0 / lam) ** (1.0 / alpha)
            for t in np.linspace(t_max / 5, t_max, 5):
                x = lam * t**alpha
                e1, _ = eval_multinomial_ml(MLParams(1.0, (alpha,)), [-x])
                e2, _ = eval_multinomial_ml(MLParams(1.0 + alpha, (alpha,)), [-x])
                worst = max(worst, abs(1.0 - x * e2 - e1))
    checks.append(Check("single-term reduction", worst <= 1e-10, f"max deviation {worst:.2e}"))

    z = np.linspace(0.0, 2.0, 21)
    exp_err = max(abs(eval_multinomial_ml(MLParams(1.0, (1.0,)), [-v])[0] - math.exp(-v)) for v in z)
    checks.append(Check("order-one exponential", exp_err <= 1e-12, f"max deviation {exp_err:.2e}"))
    half_err = max(abs(eval_multinomial_ml(MLParams(1.0, (0.5,)), [-v])[0] - erfcx(v)) for v in z)
    checks.append(Check("order-one-half erfcx", half_err <= 1e-12, f"max deviation {half_err:.2e}"))

    rng = np.random.default_rng(11)
    bad, done = [], 0
    while done < 20:
        model = random_model(rng)
        lam, t = float(np.exp(rng.uniform(-1.0, 2.0))), float(np.exp(rng.uniform(-2.0, 0.5)))
        try:
            a = eval_mode_detail(lam, model, t, route="series")
        except (DomainError, NonConvergence):
            continue
        done += 1
        b = eval_mode_detail(lam, model, t, route="ode")
        if abs(a.value - b.value) > a.error + b.error + 1e-12:
            bad.append((lam, t, model.orders, a.value, b.value))
    checks.append(Check("series against ODE", not bad, f"{len(bad)} of 20 disagree {bad[:2]}"))

    ok = True
    for _ in range(10):
        model = random_model(rng)
        values = [eval_mode_detail(3.0, model, t).value for t in np.geomspace(0.01, 5.0, 12)]
        ok &= all(0.0 < v <= 1.0 for v in values) and bool(np.all(np.diff(values) < 0))
    checks.append(Check("mode response in (0, 1] and decreasing", ok, "10 random models"))
    return checks


def suite_spectral() -> list[Check]:
    checks = []
    for bc in (NEUMANN, DIRICHLET):
        fd = solve_eigs_fd(SturmLiouvilleProblem(1.0, 0.0, math.pi, bc), 20)
        exact = closed_form_eigs(ConstantCoefficientSpec((math.pi,), 1.0, 0.0, bc), 20)
        err = float(np.max(np.abs(fd.lambdas - exact.lambdas) / np.maximum(1.0, exact.lambdas)))
        checks.append(Check(f"{bc} eigenvalues", err <= 1e-6, f"max relative error {err:.2e}"))
        gram = fd.gram()
        scale = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
        off = float(np.max(np.abs(gram - np.diag(np.diag(gram))) / scale))
        checks.append(Check(f"{bc} orthogonality", off <= 1e-8, f"max off-diagonal {off:.2e}"))
    interval = weyl_check(closed_form_eigs(ConstantCoefficientSpec((math.pi,), bc=NEUMANN), 50), 1)
    checks.append(Check("Weyl slope d=1", interval.passed, str(interval)))
    rect = weyl_check(closed_form_eigs(ConstantCoefficientSpec((math.pi, math.pi), bc=DIRICHLET), 100), 2)
    checks.append(Check("Weyl slope d=2", rect.passed, str(rect)))
    return checks


def suite_laplace() -> list[Check]:
    checks = []
    eigs, weights = unit_interval_data()
    cfg = ForwardConfig(mode_count=60, mode_tail_tol=1e-6, time_grid=TimeGrid(1e-3, 50.0, 200), estimate_error=True)
    etas = np.geomspace(0.05, 2.0, 12)
    rng = np.random.default_rng(6)
    for i in range(4):
        model = random_model(rng)
        trace = solve_trace_l2(eigs, weights, model, cfg)
        est = numerical_laplace(trace, etas)
        ref = observation_transform(weights.truncated(trace.meta["modes"]), model, etas)
        ratio = float(np.max(np.abs(est.values - ref) / est.bias))
        checks.append(Check(f"transform within bias, model {i}", ratio <= 1.0, f"error/bias {ratio:.2f} for {model.orders}"))

    x = eigs.mesh
    for i in range(5):
        bumps = rng.uniform(0.0, 1.0, 4)
        a = sum(c * np.sin((k + 1) * math.pi * x) ** 2 for k, c in enumerate(bumps))
        pk = compute_pk(project_initial_data(eigs, a, 0.5), 8, check_signs=False)
        signs = (-1.0) ** pk.ks * pk.pks
        checks.append(Check(f"sign law, data {i}", bool(np.all(signs > 0)), f"min (-1)^k p_k {signs.min():.3e}"))
    return checks


def suite_roundtrip() -> list[Check]:
    eigs, weights = unit_interval_data()
    fcfg = ForwardConfig(mode_count=60, mode_tail_tol=1e-6, time_grid=TimeGrid(1e-3, 100.0, 120))
    cfg = IdentificationConfig(forward=fcfg)
    checks = []
    for truth in (FractionalModel((0.5,), (1.0,)), FractionalModel((0.3, 0.8), (1.0, 1.0))):
        trace = synthesize(truth, eigs, weights, 0.0, 0, fcfg)
        res = identify(trace, weights, eigs, cfg)
        ok = res.n == truth.n
        detail = f"n={res.n} orders={tuple(round(a, 6) for a in res.orders)}"
        if ok:
            a_err = max(abs(a - b) for a, b in zip(res.orders, truth.orders))
            q_err = max(abs(a / b - 1.0) for a, b in zip(res.weights, truth.weights))
            ok = a_err <= 1e-3 and q_err <= 1e-2
            detail += f" order error {a_err:.1e} weight error {q_err:.1e}"
        checks.append(Check(f"round trip n={truth.n}", ok, detail))
    return checks


def suite_separation() -> list[Check]:
    eigs = closed_form_eigs(ConstantCoefficientSpec((math.pi,), bc=NEUMANN), 40)
    grid = np.geomspace(1e-3, 1e3, 61)
    rng = np.random.default_rng(21)
    violations, unseparated = [], []
    for _ in range(100):
        m1, m2 = random_model(rng), random_model(rng)
        reports = separation_scan(SymbolW(m1), SymbolW(m2), eigs, grid)
        violations += [(m1.orders, m2.orders, r.s0) for r in reports if not r.consistent]
        if not any(r.series_order != 0 for r in reports):
            unseparated.append((m1, m2))
    return [
        Check("series order follows symbol order", not violations, f"{len(violations)} violations {violations[:2]}"),
        Check("strict order found for every pair", not unseparated, f"{len(unseparated)} pairs without a strict order"),
    ]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "mlf-identities": suite_mlf,
    "spectral-closedform": suite_spectral,
    "laplace-consistency": suite_laplace,
    "inverse-roundtrip": suite_roundtrip,
    "separation": suite_separation,
}


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
