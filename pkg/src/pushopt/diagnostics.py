"""Analysis-side quantities: weighted consensus norms and their certificates.

The de-biased iterates evolve under row-stochastic matrices
W_tilde[i, j] = W[i, j] * y_t[j] / y_{t+1}[i]. A sequence of stochastic
vectors phi_t satisfying phi_{t+1}' W_tilde_t = phi_t' exists for any
recorded run and is computed backward from a terminal vector (forward
computation would need an inverse that may not exist; backward
multiplication by W_tilde' maps the probability simplex to itself exactly).
The phi-weighted deviation norm is the consensus Lyapunov quantity whose
one-step contraction the empirical checks certify.

Everything here is pure and read-only over state snapshots.
"""

from __future__ import annotations

import math

import numpy as np

from .oracle import global_gradient, global_value


def build_w_tilde(W: np.ndarray, y_t: np.ndarray, y_next: np.ndarray) -> np.ndarray:
    """Row-stochastic companion of a column-stochastic mixing step.

    Requires y_next = W @ y_t with strictly positive weights; each row of
    the result then sums to 1 by construction.
    """
    if np.any(y_t <= 0) or np.any(y_next <= 0):
        raise ValueError("degenerate push-sum weights: y must stay positive")
    return W * (y_t[None, :] / y_next[:, None])


def phi_backward(w_tildes, terminal: np.ndarray | None = None) -> np.ndarray:
    """Backward stochastic-vector recursion over recorded mixing steps.

    Given W_tilde matrices for steps t = 0..T-1, returns phis of shape
    (T+1, n) with phis[T] = terminal (uniform by default) and
    phis[t] = W_tilde_t' @ phis[t+1], so phis[t+1]' W_tilde_t = phis[t]'.
    """
    w_tildes = list(w_tildes)
    if terminal is None:
        if not w_tildes:
            raise ValueError("need a terminal vector when no matrices are given")
        terminal = np.full(w_tildes[0].shape[0], 1.0 / w_tildes[0].shape[0])
    terminal = np.asarray(terminal, dtype=np.float64)
    phis = np.empty((len(w_tildes) + 1, terminal.shape[0]))
    phis[-1] = terminal
    for k in range(len(w_tildes) - 1, -1, -1):
        phis[k] = w_tildes[k].T @ phis[k + 1]
    return phis


def l_norm_sq(M: np.ndarray, phi: np.ndarray) -> float:
    """Squared phi-weighted deviation of stacked rows from their phi-average."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    center = phi @ M
    diff = M - center[None, :]
    return float(np.sum(phi[:, None] * diff * diff))


def empirical_contraction(z_before: np.ndarray, z_after: np.ndarray,
                          phi_before: np.ndarray, phi_after: np.ndarray,
                          guard: float = 1e-14) -> float:
    """Ratio of weighted deviation norms across one mixing step.

    Returns 0 when the pre-step deviation is below the guard (consensus
    already reached, ratio undefined).
    """
    before = math.sqrt(l_norm_sq(z_before, phi_before))
    if before < guard:
        return 0.0
    return math.sqrt(l_norm_sq(z_after, phi_after)) / before


def estimator_errors(state, objective) -> tuple[float, float]:
    """Stacked and averaged squared errors of the gradient estimator v.

    Returns (||v - grad_f(z)||_F^2, ||v_bar - grad_f_bar(z)||^2) where
    grad_f stacks the exact local gradients at each node's own z.
    """
    exact = objective.grad_all(state.z)
    diff = state.v - exact
    stacked = float(np.sum(diff * diff))
    avg = diff.mean(axis=0)
    return stacked, float(avg @ avg)


def optimizer_metrics(state, objective, f_star: float | None = None) -> dict:
    """Global metrics at the node-average model x_bar."""
    xbar = state.x.mean(axis=0)
    grad = global_gradient(objective, xbar)
    value = global_value(objective, xbar)
    out = {
        "xbar": xbar,
        "grad_norm_sq": float(grad @ grad),
        "f_value": value,
        "gap": value - f_star if f_star is not None else math.nan,
    }
    return out


def analysis_constants(n: int, dim: int = 1, y_inv_sup: float = math.nan,
                       phis: np.ndarray | None = None,
                       lambdas: np.ndarray | None = None) -> dict:
    """Reported-only constants from the convergence analysis.

    The uniform positive-entry bound omega = n^-(n+2) and the worst-case
    inverse-weight bound n^n overflow quickly, so both are reported in log
    space. Empirical counterparts come from the recorded run when given.
    """
    out = {
        "log_omega": -(n + 2) * math.log(n),
        "log_y_inv_bound": n * math.log(n),
        "y_inv_sup_empirical": float(y_inv_sup),
        "phi_m_empirical": math.nan,
        "lambda_max_empirical": math.nan,
        "log_one_minus_delta_sq_theoretical": math.nan,
    }
    if phis is not None and len(phis):
        out["phi_m_empirical"] = dim / float(np.min(phis))
        # worst-case contraction margin 1 - delta^2; astronomically small,
        # so only its log is representable
        ratio = float(np.min(phis.min(axis=1)[1:] / phis.max(axis=1)[:-1]))
        out["log_one_minus_delta_sq_theoretical"] = (
            math.log(ratio) - 2 * math.log(max(n - 1, 1)) - 2 * (n + 2) * math.log(n))
    if lambdas is not None and len(lambdas):
        out["lambda_max_empirical"] = float(np.max(lambdas))
    return out


def estimate_lipschitz(objective, radius: float = 5.0, num: int = 200,
                       seed: int = 0) -> float:
    """Empirical smoothness constant from gradient differences at random pairs."""
    gen = np.random.Generator(np.random.PCG64(seed))
    best = 0.0
    for _ in range(num):
        x = gen.uniform(-radius, radius, objective.dim)
        y = x + gen.uniform(-1e-3, 1e-3, objective.dim)
        dg = global_gradient(objective, x) - global_gradient(objective, y)
        dx = np.linalg.norm(x - y)
        if dx > 0:
            best = max(best, float(np.linalg.norm(dg)) / dx)
    return best


def estimate_pl_constant(objective, lo: float = -5.0, hi: float = 5.0,
                         num: int = 2001, f_star: float | None = None) -> float:
    """Grid infimum of 0.5||grad F||^2 / (F - f_star) for scalar objectives."""
    if objective.dim != 1:
        raise ValueError("grid-based PL estimate only supports dim == 1")
    if f_star is None:
        f_star = objective.f_star
    if f_star is None:
        raise ValueError("objective must expose a known optimal value")
    best = math.inf
    for x in np.linspace(lo, hi, num):
        gap = global_value(objective, [x]) - f_star
        if gap <= 1e-12:
            continue
        g = global_gradient(objective, [x])[0]
        best = min(best, 0.5 * g * g / gap)
    return best
