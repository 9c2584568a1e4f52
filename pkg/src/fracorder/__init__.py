"""Multi-term time-fractional diffusion: forward traces and order identification."""

from .errors import *  # noqa: F401,F403
from .forward import ForwardConfig, TimeGrid, TraceSeries, read_trace, solve_trace_delta, solve_trace_l2, write_trace
from .inverse import IdentificationConfig, IdentificationResult, LsqConfig, identify, refine_lsq, select_order, synthesize
from .laplace import SymbolW, compute_pk, numerical_laplace, observation_transform, separation_diagnostic
from .mlf import FractionalModel, MLParams, TruncationPolicy, eval_mode, eval_multinomial_ml, frac_ode_oracle
from .spectral import (
    ConstantCoefficientSpec,
    EigenSystem,
    ModalWeights,
    SturmLiouvilleProblem,
    closed_form_eigs,
    project_initial_data,
    solve_eigs_fd,
    weyl_check,
)

__version__ = "0.1.0"
