"""Optimizers: Adam with cosine-annealing schedule, and L-BFGS with strong Wolfe search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

Array = np.ndarray

CURVATURE_EPS = 1e-10


@dataclass
class CosineSchedule:
    """eta(t) = eta_min + 0.5 (eta0 - eta_min) (1 + cos(pi t / T))."""

    lr0: float = 1e-3
    lr_min: float = 1e-6
    total_steps: int = 1000

    def at(self, step: int) -> float:
        t = min(step, self.total_steps)
        return self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (
            1.0 + np.cos(np.pi * t / self.total_steps)
        )


@dataclass
class AdamState:
    m: Array
    v: Array
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: CosineSchedule = field(default_factory=CosineSchedule)

    @staticmethod
    def init(n: int, schedule: CosineSchedule | None = None, **kw) -> "AdamState":
        return AdamState(
            m=np.zeros(n), v=np.zeros(n), schedule=schedule or CosineSchedule(), **kw
        )


def adam_step(state: AdamState, params: Array, grad: Array) -> Array:
    """One Adam update with bias correction; returns the new parameter vector."""
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise ConfigurationError(
            f"non-finite gradient at component {bad} on step {state.step}"
        )
    state.step += 1
    lr = state.schedule.at(state.step - 1)
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = state.m / (1 - state.beta1**state.step)
    vhat = state.v / (1 - state.beta2**state.step)
    return params - lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LbfgsResult:
    x: Array
    trace: list[float]
    n_iters: int
    converged: bool


def lbfgs_minimize(
    loss_and_grad: Callable[[Array], tuple[float, Array]],
    x0: Array,
    max_iters: int,
    grad_tol: float = 1e-9,
    history: int = 20,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_bracket: int = 25,
    callback: Callable[[int, float], None] | None = None,
) -> LbfgsResult:
    """Limited-memory BFGS with a strong Wolfe line search.

    ``loss_and_grad`` returns (scalar loss, gradient). Stops when the
    max-norm of the gradient falls below ``grad_tol`` or after ``max_iters``
    iterations. The trace records the loss at entry to every iteration;
    under a successful Wolfe search it is non-increasing. When bracketing
    fails, falls back to a halving steepest-descent step.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("initial parameters must be finite")
    f, g = loss_and_grad(x)
    trace = [float(f)]
    s_list: list[Array] = []
    y_list: list[Array] = []
    rho_list: list[float] = []
    for it in range(max_iters):
        if np.max(np.abs(g)) <= grad_tol:
            return LbfgsResult(x, trace, it, True)
        d = _two_loop_direction(g, s_list, y_list, rho_list)
        if d @ g >= 0:  # not a descent direction; reset memory
            s_list.clear(), y_list.clear(), rho_list.clear()
            d = -g
        step = _strong_wolfe(loss_and_grad, x, f, g, d, c1, c2, max_bracket)
        if step is None:
            x_new, f_new, g_new = _fallback_descent(loss_and_grad, x, f, g)
            if x_new is None:
                log.warning("L-BFGS halted: no descent found at iteration %d", it)
                return LbfgsResult(x, trace, it, False)
            log.warning("L-BFGS line search failed at iteration %d; fell back to steepest descent", it)
            s_list.clear(), y_list.clear(), rho_list.clear()
        else:
            alpha, f_new, g_new = step
            x_new = x + alpha * d
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > CURVATURE_EPS:
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > history:
                s_list.pop(0), y_list.pop(0), rho_list.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if callback is not None:
            callback(it, float(f))
    converged = bool(np.max(np.abs(g)) <= grad_tol)
    return LbfgsResult(x, trace, max_iters, converged)


def _two_loop_direction(g, s_list, y_list, rho_list) -> Array:
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if y_list:
        y = y_list[-1]
        gamma = (s_list[-1] @ y) / (y @ y)
        q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _strong_wolfe(loss_and_grad, x, f0, g0, d, c1, c2, max_iter):
    """Bracket-and-zoom strong Wolfe search; returns (alpha, f, g) or None."""
    dphi0 = g0 @ d
    if dphi0 >= 0:
        return None
    a_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    a = 1.0
    a_max = 1e10
    for i in range(max_iter):
        f_a, g_a = loss_and_grad(x + a * d)
        dphi_a = g_a @ d
        if not np.isfinite(f_a):
            # step overshot into bad territory: zoom back toward a_prev
            result = _zoom(
                loss_and_grad, x, f0, dphi0, d, a_prev, phi_prev, dphi_prev, a, c1, c2, max_iter
            )
            return result
        if f_a > f0 + c1 * a * dphi0 or (i > 0 and f_a >= phi_prev):
            return _zoom(
                loss_and_grad, x, f0, dphi0, d, a_prev, phi_prev, dphi_prev, a, c1, c2, max_iter
            )
        if abs(dphi_a) <= -c2 * dphi0:
            return a, f_a, g_a
        if dphi_a >= 0:
            return _zoom(
                loss_and_grad, x, f0, dphi0, d, a, f_a, dphi_a, a_prev, c1, c2, max_iter
            )
        a_prev, phi_prev, dphi_prev = a, f_a, dphi_a
        a = min(2.0 * a, a_max)
    return None


def _zoom(loss_and_grad, x, f0, dphi0, d, a_lo, phi_lo, dphi_lo, a_hi, c1, c2, max_iter):
    for _ in range(max_iter):
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            return None
        a = 0.5 * (a_lo + a_hi)
        f_a, g_a = loss_and_grad(x + a * d)
        dphi_a = g_a @ d
        if not np.isfinite(f_a) or f_a > f0 + c1 * a * dphi0 or f_a >= phi_lo:
            a_hi = a
        else:
            if abs(dphi_a) <= -c2 * dphi0:
                return a, f_a, g_a
            if dphi_a * (a_hi - a_lo) >= 0:
                a_hi = a_lo
            a_lo, phi_lo = a, f_a
    return None


def _fallback_descent(loss_and_grad, x, f, g, max_halvings=30):
    """Backtracking steepest descent used when the Wolfe search fails."""
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return None, None, None
    step = 1.0 / max(1.0, gnorm)
    for _ in range(max_halvings):
        x_new = x - step * g
        f_new, g_new = loss_and_grad(x_new)
        if np.isfinite(f_new) and f_new < f:
            return x_new, f_new, g_new
        step *= 0.5
    return None, None, None
