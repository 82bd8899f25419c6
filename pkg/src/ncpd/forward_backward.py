"""Projected-gradient steps, their merit envelope, and the step Jacobian.

A forward-backward step at ``x`` with stepsize ``gamma`` moves along the
negative gradient and projects back onto the feasible set:

    w = x - gamma * grad f(x),   z = project(w),   r = x - z.

The envelope value

    env(x) = f(x) - <grad f(x), r> + ||r||^2 / (2 gamma)

is the minimum of the local quadratic model over the feasible set and never
exceeds ``f(x)`` on feasible points; it is the merit function the solver
monitors.  The fixed-point residual ``r`` vanishes exactly at stationary
points.

``jhat_operator`` builds the Gauss-Newton surrogate of the residual map's
generalized Jacobian,

    v  ->  v - P (v - gamma * G v),

with ``P`` a projection-Jacobian element at ``w`` and ``G`` the Gramian at
``x``; it drops only second-order terms proportional to the residual, which
vanish at exact fits.
"""

from __future__ import annotations

import numpy as np

from .calculus import EvalCounters, GramianOperator, gradient
from .constraints import FeasibleSet, ProjJacobianElement, project, proj_jacobian
from .tensors import CpdPoint, DenseTensor, objective_value

__all__ = [
    "CpdProblem",
    "StepState",
    "fb_step",
    "residual_map",
    "fbe",
    "JhatOperator",
    "jhat_operator",
]


class CpdProblem:
    """A data tensor, a feasible set, and the work counters of one solve.

    All objective and gradient evaluations the solver performs are routed
    through this object so the counters stay exact.
    """

    def __init__(self, tensor: DenseTensor, fset: FeasibleSet, counters: EvalCounters | None = None):
        if fset.structure.dims != tensor.dims:
            raise ValueError(
                f"feasible set dims {fset.structure.dims} do not match tensor {tensor.dims}"
            )
        self.tensor = tensor
        self.fset = fset
        self.counters = counters if counters is not None else EvalCounters()

    @property
    def structure(self):
        return self.fset.structure

    def point(self, x) -> CpdPoint:
        return CpdPoint.from_flat(self.structure, x)

    def objective(self, point: CpdPoint) -> float:
        self.counters.fevals += 1
        value = objective_value(point, self.tensor)
        if not np.isfinite(value):
            raise FloatingPointError("objective evaluated to a non-finite value")
        return value

    def gradient(self, point: CpdPoint) -> np.ndarray:
        self.counters.gevals += 1
        g = gradient(point, self.tensor)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("gradient evaluated to a non-finite value")
        return g

    def gramian(self, point: CpdPoint) -> GramianOperator:
        return GramianOperator(point, self.counters)


class StepState:
    """Everything the solver needs at one (point, stepsize) pair.

    Immutable in spirit: all fields are computed once; the objective at the
    projected point and the Gramian are evaluated lazily on first use and
    cached.  Use :meth:`with_gamma` to re-evaluate the same point at a
    different stepsize without repeating the gradient.
    """

    def __init__(self, problem: CpdProblem, x: np.ndarray, gamma: float, fx: float, grad: np.ndarray):
        if not gamma > 0:
            raise ValueError(f"stepsize must be positive, got {gamma}")
        self.problem = problem
        self.x = x
        self.gamma = gamma
        self.fx = fx
        self.grad = grad
        self.w = x - gamma * grad
        self.z = project(problem.fset, self.w)
        self.r = x - self.z.flat
        rsq = float(self.r @ self.r)
        self.rnorm = np.sqrt(rsq)
        self.fbe = fx - float(grad @ self.r) + rsq / (2.0 * gamma)
        self._fz = None
        self._gramian = None

    @property
    def degenerate(self) -> bool:
        return self.z.degenerate

    @property
    def fz(self) -> float:
        """Objective at the projected point; one counted evaluation, cached."""
        if self._fz is None:
            self._fz = self.problem.objective(self.z)
        return self._fz

    def gramian(self) -> GramianOperator:
        if self._gramian is None:
            self._gramian = self.problem.gramian(self.problem.point(self.x))
        return self._gramian

    def with_gamma(self, gamma: float) -> "StepState":
        state = StepState(self.problem, self.x, gamma, self.fx, self.grad)
        state._gramian = self._gramian  # same point, stepsize-independent
        return state


def fb_step(problem: CpdProblem, x, gamma: float) -> StepState:
    """Evaluate one forward-backward step; exactly one objective and one
    gradient evaluation are consumed."""
    x = np.asarray(x, dtype=np.float64)
    point = problem.point(x)
    fx = problem.objective(point)
    grad = problem.gradient(point)
    return StepState(problem, x, gamma, fx, grad)


def residual_map(state: StepState) -> np.ndarray:
    """Fixed-point residual ``x - project(x - gamma grad f(x))``."""
    return state.r


def fbe(state: StepState) -> float:
    """Envelope value at the state's point and stepsize."""
    return state.fbe


class JhatOperator:
    """Gauss-Newton surrogate Jacobian of the fixed-point residual map.

    apply:            v -> v - P (v - gamma G v)
    apply_transpose:  v -> v - (v - gamma G (P v))   [P, G symmetric]
    """

    def __init__(self, proj_el: ProjJacobianElement, gram: GramianOperator, gamma: float):
        if proj_el.size != gram.size:
            raise ValueError("projection Jacobian and Gramian sizes differ")
        self.proj_el = proj_el
        self.gram = gram
        self.gamma = gamma

    @property
    def size(self) -> int:
        return self.gram.size

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        inner = v - self.gamma * self.gram.apply(v)
        return v - self.proj_el.apply(inner)

    def apply_transpose(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        pv = self.proj_el.apply(v)
        return v - pv + self.gamma * self.gram.apply(pv)


def jhat_operator(state: StepState, convention: int = 0) -> JhatOperator:
    """Surrogate Jacobian element at a step state.

    Raises :class:`~ncpd.constraints.DegenerateBlockError` when the
    pre-projection point has a factor block with no positive part.
    """
    proj_el = proj_jacobian(state.problem.fset, state.w, convention)
    return JhatOperator(proj_el, state.gramian(), state.gamma)
