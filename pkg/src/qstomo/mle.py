"""Maximum-likelihood density-matrix estimation over the Cholesky manifold.

The objective is the Gaussian approximation to the Poisson likelihood with the
variance replaced by the observed counts::

    L(t) = 1/2 * sum_nu (N * Tr(Pi_nu rho(t)) - n_nu)**2 / n_nu

Its gradient is assembled as a complex matrix derivative with respect to the
Cholesky factor ``T = X + iY`` and then read off at the positions the
parameters occupy in ``T``.  With ``A = Tr(T^dagger T)``,
``B_nu = Tr(Pi_nu T^dagger T)`` and ``Pi_nu = K_nu + i Lambda_nu``::

    dA/dT     = 2X + 2iY
    dB_nu/dT  = 2X K_nu - 2Y Lambda_nu + i (2X Lambda_nu + 2Y K_nu)
    C_nu      = (N B_nu - A n_nu) / (A n_nu)
    D_nu      = (A dB_nu/dT - B_nu dA/dT) / A**2
    dL/dT     = N * sum_nu C_nu D_nu

The sum over ``nu`` is linear in ``K_nu`` and ``Lambda_nu``, so it is taken
over the projector stacks first and multiplied by ``X``/``Y`` once.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

from .linalg import check_allocation
from .reconstruction import MeasurementRecord, linear_reconstruct, quick_and_dirty
from .states import (
    STOKES,
    ProjectorBasis,
    cholesky_matrix,
    cholesky_params_of,
    params_from_matrix,
    rho_from_cholesky,
    tensor_power_stack,
)

TERMINATION_REASONS = ("gradient-converged", "decrease-converged", "iteration-cap", "line-search-failure")


class LikelihoodContext:
    """Counts plus the cached real and imaginary parts of every projector.

    ``counters`` tallies likelihood and gradient calls and an estimate of the
    multiply-adds each performed (``"flops"``).
    """

    def __init__(self, record: MeasurementRecord, basis: ProjectorBasis = STOKES):
        n = record.qubits
        d = 2**n
        check_allocation((2, 4**n, d, d), np.float64, "projector cache")
        stack = tensor_power_stack(basis.projectors, n)
        self.record = record
        self.basis = basis
        self.qubits = n
        self.shots = float(record.shots)
        self.counts = record.counts
        # zero counts would divide by zero; one count is the smallest Poisson variance estimate
        self.denominators = np.maximum(record.counts, 1.0)
        self.projector_real_parts = np.ascontiguousarray(stack.real)
        self.projector_imag_parts = np.ascontiguousarray(stack.imag)
        self._k_flat = self.projector_real_parts.reshape(4**n, d * d)
        self._l_flat = self.projector_imag_parts.reshape(4**n, d * d)
        self.counters = {"likelihood": 0, "gradient": 0, "flops": 0}

    def reset_counters(self) -> None:
        for k in self.counters:
            self.counters[k] = 0

    def _projector_traces(self, T: np.ndarray) -> tuple[float, np.ndarray]:
        """``A = Tr(T^dagger T)`` and ``B_nu = Tr(Pi_nu T^dagger T)`` for all ``nu``."""
        phi = T.conj().T @ T
        A = float(np.trace(phi).real)
        # Re Tr(Pi Phi) = sum K*Re(Phi) + Lambda*Im(Phi), using K symmetric and Lambda antisymmetric
        B = self._k_flat @ phi.real.ravel() + self._l_flat @ phi.imag.ravel()
        m, dd = self._k_flat.shape
        self.counters["flops"] += 2 * m * dd + T.shape[0] ** 3
        return A, B


def likelihood(t: np.ndarray, ctx: LikelihoodContext) -> float:
    t = np.asarray(t, dtype=np.float64)
    A, B = ctx._projector_traces(cholesky_matrix(t))
    ctx.counters["likelihood"] += 1
    resid = ctx.shots * B / A - ctx.counts
    return 0.5 * float(np.sum(resid * resid / ctx.denominators))


def likelihood_matrix_gradient(t: np.ndarray, ctx: LikelihoodContext) -> np.ndarray:
    """The complex matrix ``dL/dT``; only its lower triangle and real diagonal are meaningful."""
    t = np.asarray(t, dtype=np.float64)
    T = cholesky_matrix(t)
    A, B = ctx._projector_traces(T)
    ctx.counters["gradient"] += 1
    N = ctx.shots
    C = (N * B - A * ctx.counts) / (A * ctx.denominators)
    K_c = np.tensordot(C, ctx.projector_real_parts, axes=1)
    L_c = np.tensordot(C, ctx.projector_imag_parts, axes=1)
    CB = float(np.dot(C, B))
    X, Y = T.real, T.imag
    dB = 2 * X @ K_c - 2 * Y @ L_c + 1j * (2 * X @ L_c + 2 * Y @ K_c)
    dA = 2 * X + 2j * Y
    m, dd = ctx._k_flat.shape
    ctx.counters["flops"] += 2 * m * dd + 4 * T.shape[0] ** 3
    return N * (A * dB - CB * dA) / A**2


def likelihood_gradient(t: np.ndarray, ctx: LikelihoodContext) -> np.ndarray:
    return extract_gradient_vector(likelihood_matrix_gradient(t, ctx), ctx.qubits)


def extract_gradient_vector(grad_matrix: np.ndarray, n: int) -> np.ndarray:
    """Read a parameter-shaped vector off a ``2**n x 2**n`` matrix derivative."""
    grad_matrix = np.asarray(grad_matrix)
    d = 2**n
    if grad_matrix.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} gradient matrix for n={n}, got {grad_matrix.shape}")
    return params_from_matrix(grad_matrix)


def seed_gradient_matrix(vec: np.ndarray) -> np.ndarray:
    """Place a parameter-shaped vector back at its positions in a lower-triangular matrix."""
    return cholesky_matrix(vec)


# ----------------------------------------------------------------------- optimizer


@dataclass
class OptimizerConfig:
    gradient_norm_tolerance: float = 1e-6
    relative_decrease_tolerance: float = 1e-10
    max_iterations: int | None = None  # None means 200 * len(start)
    line_search_sufficient_decrease: float = 1e-4
    line_search_curvature: float = 0.9
    initial_step: float = 1.0

    def __post_init__(self):
        if self.gradient_norm_tolerance <= 0 or self.relative_decrease_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        c1, c2 = self.line_search_sufficient_decrease, self.line_search_curvature
        if not 0 < c1 < c2 < 1:
            raise ValueError("need 0 < sufficient_decrease < curvature < 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


@dataclass
class OptimizationReport:
    final_params: np.ndarray
    final_objective: float
    iterations: int
    gradient_norm: float
    termination_reason: str
    function_evaluations: int = 0
    gradient_evaluations: int = 0
    restarts: int = 0
    line_search_seconds: float = 0.0
    objective_history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["final_params"] = [float(x) for x in self.final_params]
        out["objective_history"] = [float(x) for x in self.objective_history]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    config: OptimizerConfig | None = None,
) -> OptimizationReport:
    """BFGS with a strong-Wolfe line search.

    On a line-search failure the inverse-Hessian estimate is reset and the
    step retried once; a second consecutive failure ends the run with the best
    iterate so far.
    """
    config = config or OptimizerConfig()
    counts = {"f": 0, "g": 0}

    def f(x):
        counts["f"] += 1
        return objective(x)

    def g(x):
        counts["g"] += 1
        return gradient(x)

    x = np.array(start, dtype=np.float64)
    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    gx = g(x)
    size = x.size
    max_iter = config.max_iterations or 200 * size
    eye = np.eye(size)
    H = eye.copy()
    fresh_H = True
    history = [fx]
    prev_f = None
    reason = "iteration-cap"
    restarts = 0
    failures = 0
    ls_time = 0.0
    it = 0
    while it < max_iter:
        gnorm = float(np.linalg.norm(gx))
        if gnorm <= config.gradient_norm_tolerance:
            reason = "gradient-converged"
            break
        p = -H @ gx
        slope = float(gx @ p)
        if slope >= 0:
            H = eye.copy()
            fresh_H = True
            p = -gx
            slope = -gnorm**2
        if fresh_H:
            # first step after a reset: scale so the trial step has length initial_step
            p = p * (config.initial_step / max(np.linalg.norm(p), 1e-300))
        tic = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, _, _, f_new, _, _ = line_search(
                f,
                g,
                x,
                p,
                gfk=gx,
                old_fval=fx,
                old_old_fval=prev_f,
                c1=config.line_search_sufficient_decrease,
                c2=config.line_search_curvature,
                maxiter=50,
            )
        ls_time += time.perf_counter() - tic
        if alpha is None or f_new is None or not np.isfinite(f_new) or f_new > fx:
            failures += 1
            if failures >= 2 or fresh_H:
                reason = "line-search-failure"
                break
            restarts += 1
            H = eye.copy()
            fresh_H = True
            continue
        failures = 0
        it += 1
        s = alpha * p
        x_new = x + s
        g_new = g(x_new)
        y = g_new - gx
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh_H:
                H = eye * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
            fresh_H = False
        prev_f, fx, x, gx = fx, float(f_new), x_new, g_new
        history.append(fx)
        if prev_f - fx <= config.relative_decrease_tolerance * max(abs(prev_f), np.finfo(float).tiny):
            reason = "decrease-converged"
            break
    return OptimizationReport(
        final_params=x,
        final_objective=float(fx),
        iterations=it,
        gradient_norm=float(np.linalg.norm(gx)),
        termination_reason=reason,
        function_evaluations=counts["f"],
        gradient_evaluations=counts["g"],
        restarts=restarts,
        line_search_seconds=ls_time,
        objective_history=history,
    )


def mle_estimate(
    record: MeasurementRecord,
    basis: ProjectorBasis = STOKES,
    config: OptimizerConfig | None = None,
    start: np.ndarray | None = None,
) -> tuple[np.ndarray, OptimizationReport]:
    """Linear inversion, eigenvalue repair, then BFGS on the likelihood from that seed."""
    ctx = LikelihoodContext(record, basis)
    if start is None:
        rho_qd = quick_and_dirty(linear_reconstruct(record, basis))
        start = cholesky_params_of(rho_qd)
    report = minimize(lambda t: likelihood(t, ctx), lambda t: likelihood_gradient(t, ctx), start, config)
    return rho_from_cholesky(report.final_params), report
