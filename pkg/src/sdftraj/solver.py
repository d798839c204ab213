"""Levenberg-Marquardt over residual blocks.

The problem is ``min_c sum_b |r_b(c)|^2``.  Each :class:`ResidualBlock`
supplies its residual and Jacobian.  Blocks may depend on external state
(cached distance-field samples); the optional ``pre_eval_hook`` is called
with every new state before any block is evaluated there, which lets the
caller refresh that state once per solver state.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import IO, Callable, Optional, Sequence

import numpy as np

LAMBDA_INIT = 1e-4
LAMBDA_UP = 10.0
LAMBDA_DOWN = 0.1
LAMBDA_MAX = 1e16


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class ResidualBlock:
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    dim: int
    name: str = ""

    def evaluate(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(self.residual(c), dtype=float).reshape(-1)
        J = np.asarray(self.jacobian(c), dtype=float)
        if r.shape != (self.dim,) or J.shape != (self.dim, len(c)):
            raise ValueError(f"block {self.name!r}: residual {r.shape} / jacobian {J.shape} "
                             f"inconsistent with dim {self.dim} and state size {len(c)}")
        return r, J


@dataclass(frozen=True)
class Tolerances:
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    cost_tol: float = 1e-8


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    cost: float        # cost at the current (accepted) state after this iteration
    lam: float
    step_norm: float
    accepted: bool


@dataclass
class SolveReport:
    final_state: np.ndarray
    initial_cost: float
    final_cost: float
    iterations_used: int
    termination: Termination
    wall_time_s: float
    trace: list = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.termination is not Termination.NUMERICAL_FAILURE

    def accepted_costs(self) -> list[float]:
        return [self.initial_cost] + [t.cost for t in self.trace if t.accepted]


def _assemble(blocks, c, want_jacobian=True):
    rs, Js = [], []
    for b in blocks:
        if want_jacobian:
            r, J = b.evaluate(c)
            Js.append(J)
        else:
            r = np.asarray(b.residual(c), dtype=float).reshape(-1)
        rs.append(r)
    r = np.concatenate(rs) if rs else np.zeros(0)
    J = np.vstack(Js) if want_jacobian and Js else np.zeros((len(r), len(c)))
    return r, J


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _damped_step(JtJ, g, lam):
    """Solve ``(JtJ + lam I) delta = -g`` by Cholesky, raising lam on failure."""
    n = len(g)
    while lam <= LAMBDA_MAX:
        try:
            L = np.linalg.cholesky(JtJ + lam * np.eye(n))
        except np.linalg.LinAlgError:
            lam *= LAMBDA_UP
            continue
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y), lam
    raise NumericalFailure("normal equations not positive definite at any damping")


def solve(blocks: Sequence[ResidualBlock], x0, max_iterations: int = 50,
          pre_eval_hook: Optional[Callable[[np.ndarray], None]] = None,
          tolerances: Tolerances = Tolerances(), trace_stream: Optional[IO[str]] = None) -> SolveReport:
    """Minimize ``sum |r(c)|^2`` from ``x0``.

    Every step attempt counts as one iteration, accepted or not.  A trial
    state whose residual is non-finite is treated as a rejected step; a
    non-finite residual or Jacobian at an accepted state ends the solve
    with ``numerical_failure`` and returns the last good state.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    x = np.array(x0, dtype=float).reshape(-1)
    if not _finite(x):
        raise ValueError("x0 must be finite")
    t0 = time.perf_counter()
    hook = pre_eval_hook or (lambda c: None)

    def report(state, cost, its, term, trace, msg=""):
        return SolveReport(state.copy(), initial_cost, cost, its, term,
                           time.perf_counter() - t0, trace, msg)

    hook(x.copy())
    r, J = _assemble(blocks, x)
    initial_cost = float(r @ r) if _finite(r) else float("inf")
    if not _finite(r, J):
        return report(x, initial_cost, 0, Termination.NUMERICAL_FAILURE, [], "non-finite at x0")

    cost = initial_cost
    lam = LAMBDA_INIT
    trace: list[TraceEntry] = []
    for it in range(1, max_iterations + 1):
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= tolerances.gradient_tol:
            return report(x, cost, it - 1, Termination.CONVERGED, trace, "gradient tolerance")
        JtJ = J.T @ J
        try:
            delta, lam = _damped_step(JtJ, g, lam)
        except NumericalFailure as exc:
            return report(x, cost, it - 1, Termination.NUMERICAL_FAILURE, trace, str(exc))
        step_norm = float(np.linalg.norm(delta))
        if step_norm <= tolerances.step_tol * (np.linalg.norm(x) + tolerances.step_tol):
            return report(x, cost, it - 1, Termination.CONVERGED, trace, "step tolerance")

        x_new = x + delta
        hook(x_new.copy())
        r_new, _ = _assemble(blocks, x_new, want_jacobian=False)
        new_cost = float(r_new @ r_new) if _finite(r_new) else float("inf")
        accepted = new_cost <= cost
        if accepted:
            _, J_new = _assemble(blocks, x_new)
            if not _finite(J_new):
                return report(x, cost, it, Termination.NUMERICAL_FAILURE, trace,
                              "non-finite jacobian at accepted state")
            old_cost = cost
            x, r, J, cost = x_new, r_new, J_new, new_cost
            lam = max(lam * LAMBDA_DOWN, 1e-15)
        else:
            lam *= LAMBDA_UP
        entry = TraceEntry(it, cost, lam, step_norm, accepted)
        trace.append(entry)
        if trace_stream is not None:
            trace_stream.write(f"iter {it:4d} cost {cost:.9e} lambda {lam:.3e} "
                               f"step {step_norm:.3e} {'accept' if accepted else 'reject'}\n")
        if accepted and abs(old_cost - cost) <= tolerances.cost_tol * old_cost:
            return report(x, cost, it, Termination.CONVERGED, trace, "cost tolerance")
        if lam > LAMBDA_MAX:
            return report(x, cost, it, Termination.CONVERGED, trace, "damping saturated")
    return report(x, cost, max_iterations, Termination.MAX_ITERATIONS, trace)


def check_jacobian(block: ResidualBlock, c, step: float = 1e-6, order: int = 2) -> float:
    """Max entrywise relative error of the analytic Jacobian vs central differences.

    ``order=2`` is the three-point central difference, ``order=4`` the
    five-point stencil, whose truncation error is O(step^4).  Relative
    error is ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    c = np.array(c, dtype=float)
    _, J = block.evaluate(c)
    num = np.empty_like(J)

    def diff(k, h):
        e = np.zeros_like(c)
        e[k] = h
        # use the perturbation actually representable at c[k]
        hk = ((c + e) - (c - e))[k]
        rp = np.asarray(block.residual(c + e), dtype=float)
        rm = np.asarray(block.residual(c - e), dtype=float)
        return (rp - rm) / hk

    for k in range(len(c)):
        if order == 2:
            num[:, k] = diff(k, step)
        else:
            num[:, k] = (4 * diff(k, step) - diff(k, 2 * step)) / 3
    if not _finite(J, num):
        raise NumericalFailure(f"block {block.name!r}: non-finite evaluation")
    denom = np.maximum(np.maximum(np.abs(J), np.abs(num)), 1e-12)
    return float(np.max(np.abs(J - num) / denom, initial=0.0))
