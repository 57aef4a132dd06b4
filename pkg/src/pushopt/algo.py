"""The decentralized optimizer state machine and its synchronized run loop.

Each node carries (x, y, z, v, g): the raw model x, the push-sum weight y,
the de-biased model z = x/y, the local gradient estimator v, and the global
gradient tracker g. One synchronized round of the accelerated variant is

    x+ = W (x - alpha g)          mixing of corrected models
    y+ = W y,  z+ = x+/y+         push-sum de-biasing
    v+ = grad(z+, xi) + (1-beta)(v - grad(z, xi))    shared sample xi
    g+ = W (g + v+ - v)           gradient tracking

with all mixing sums over pre-round neighbor values. The plain baseline
replaces v/g with the freshly sampled gradient and skips tracking.

Variants: "push-asgd" (beta from config), "gt-sgd" (beta pinned to 1, the
momentum-free limit), "gt-sarah" (beta pinned to 0, recursive-only limit),
and the baseline "push-sgd".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .backend import resolve_backend
from .oracle import PLSineObjective, StochasticOracle

GUARD_LIMIT = 1e12

VARIANTS = ("push-asgd", "push-sgd", "gt-sgd", "gt-sarah")

TRACE_COLUMNS = ("t", "sfo", "grad_norm_sq", "gap", "l2_z", "l2_h", "est_err",
                 "est_err_avg", "consensus", "lambda_emp", "y_min")


class NumericalDivergenceError(RuntimeError):
    """Raised when an iterate leaves the finite range; carries the step index."""

    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"numerical divergence at step {step}" + (f": {detail}" if detail else ""))
        self.step = step
        self.partial_trace = None


@dataclass
class AlgoConfig:
    variant: str = "push-asgd"
    alpha: float = 0.01
    beta: float = 0.015
    init_batch: int = 1
    T: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.alpha < 0:
            raise ValueError(f"step size must be >= 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"momentum step size must be in [0, 1], got {self.beta}")
        if self.init_batch < 1:
            raise ValueError(f"init batch must be >= 1, got {self.init_batch}")
        if self.T < 0:
            raise ValueError(f"iteration count must be >= 0, got {self.T}")

    @property
    def effective_beta(self) -> float:
        if self.variant == "gt-sgd":
            return 1.0
        if self.variant == "gt-sarah":
            return 0.0
        return self.beta


@dataclass
class SwarmState:
    x: np.ndarray  # (n, d) models
    y: np.ndarray  # (n,)   push-sum weights
    z: np.ndarray  # (n, d) de-biased models x/y
    v: np.ndarray  # (n, d) gradient estimators
    g: np.ndarray  # (n, d) gradient trackers
    t: int = 0
    sfo: int = 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def _guard(arrays, step: int):
    for name, arr in arrays:
        if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > GUARD_LIMIT:
            raise NumericalDivergenceError(step, f"non-finite or huge entries in {name}")


def init(oracle: StochasticOracle, config: AlgoConfig, x0=None) -> SwarmState:
    """Common start point, unit weights, and the batched gradient estimate.

    x0 may be None (zeros), a scalar, a (d,) vector shared by all nodes, or
    an (n, d) per-node matrix (used by consensus experiments that need
    heterogeneous starts). The baseline variant skips the init batch: its
    rounds sample fresh gradients, so its oracle count stays at n per step.
    """
    n, d = oracle.n, oracle.dim
    if x0 is None:
        x = np.zeros((n, d))
    else:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.ndim <= 1:
            x = np.broadcast_to(x0.reshape(-1), (n, d)).copy() if x0.size == d \
                else np.full((n, d), float(x0))
        else:
            if x0.shape != (n, d):
                raise ValueError(f"per-node start must have shape ({n}, {d})")
            x = x0.copy()
    y = np.ones(n)
    z = x.copy()
    if config.variant == "push-sgd":
        g = np.zeros((n, d))
    else:
        g = oracle.init_gradient_all(z, config.init_batch)
    return SwarmState(x=x, y=y, z=z, v=g.copy(), g=g.copy(), t=0, sfo=oracle.sfo_count)


def step_push_asgd(state: SwarmState, W: np.ndarray, oracle: StochasticOracle,
                   alpha: float, beta: float) -> SwarmState:
    """One synchronized round of the accelerated variant."""
    t = state.t
    x1 = W @ (state.x - alpha * state.g)
    y1 = W @ state.y
    z1 = x1 / y1[:, None]
    g_fresh = oracle.stochastic_gradient_all(t, z1, which="fresh")
    g_reuse = oracle.stochastic_gradient_all(t, state.z, which="reuse")
    v1 = g_fresh + (1.0 - beta) * (state.v - g_reuse)
    g1 = W @ (state.g + v1 - state.v)
    _guard((("x", x1), ("g", g1)), t + 1)
    return SwarmState(x=x1, y=y1, z=z1, v=v1, g=g1, t=t + 1, sfo=oracle.sfo_count)


def step_push_sgd(state: SwarmState, W: np.ndarray, oracle: StochasticOracle,
                  alpha: float) -> SwarmState:
    """One round of the baseline: mix models corrected by fresh gradients."""
    t = state.t
    grads = oracle.stochastic_gradient_all(t, state.z, which="fresh")
    x1 = W @ (state.x - alpha * grads)
    y1 = W @ state.y
    z1 = x1 / y1[:, None]
    _guard((("x", x1),), t + 1)
    # v/g hold the gradients used this round (diagnostics read them lagged)
    return SwarmState(x=x1, y=y1, z=z1, v=grads, g=grads, t=t + 1, sfo=oracle.sfo_count)


@dataclass
class RunTrace:
    """Per-probe diagnostics of one run plus reported analysis constants.

    Column arrays are aligned with `t`. Entries that need the recorded
    mixing window (l2_z, l2_h, lambda_emp) are NaN outside it; gap is NaN
    when the objective has no known optimal value.
    """

    variant: str
    seed: int
    alpha: float
    beta: float
    T: int
    n: int
    dim: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    sfo: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    grad_norm_sq: np.ndarray = field(default_factory=lambda: np.empty(0))
    gap: np.ndarray = field(default_factory=lambda: np.empty(0))
    l2_z: np.ndarray = field(default_factory=lambda: np.empty(0))
    l2_h: np.ndarray = field(default_factory=lambda: np.empty(0))
    est_err: np.ndarray = field(default_factory=lambda: np.empty(0))
    est_err_avg: np.ndarray = field(default_factory=lambda: np.empty(0))
    consensus: np.ndarray = field(default_factory=lambda: np.empty(0))
    lambda_emp: np.ndarray = field(default_factory=lambda: np.empty(0))
    y_min: np.ndarray = field(default_factory=lambda: np.empty(0))
    constants: dict = field(default_factory=dict)
    xbar_hist: np.ndarray | None = None
    diverged: bool = False
    divergence_step: int = -1
    meta: dict = field(default_factory=dict)

    def metric(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(f"unknown metric {name!r}; expected one of {TRACE_COLUMNS}")
        return getattr(self, name)

    def final(self, name: str) -> float:
        col = self.metric(name)
        return float(col[-1]) if len(col) else math.nan


def _probe_row(state: SwarmState, objective, f_star) -> dict:
    metrics = diagnostics.optimizer_metrics(state, objective, f_star)
    est, est_avg = diagnostics.estimator_errors(state, objective)
    zbar = state.z.mean(axis=0)
    dz = state.z - zbar[None, :]
    return {
        "t": state.t,
        "sfo": state.sfo,
        "grad_norm_sq": metrics["grad_norm_sq"],
        "gap": metrics["gap"],
        "l2_z": math.nan,
        "l2_h": math.nan,
        "est_err": est,
        "est_err_avg": est_avg,
        "consensus": float(np.sum(dz * dz)),
        "lambda_emp": math.nan,
        "y_min": float(state.y.min()),
    }


def _kernel_eligible(objective, config, schedule, phi_window: int) -> bool:
    return (isinstance(objective, PLSineObjective)
            and phi_window == 0
            and schedule.mixing_stack() is not None)


def run(objective, config: AlgoConfig, schedule, seed: int, *,
        x0=None, probe_stride: int = 1, phi_window: int = 0,
        shared_noise: bool = False, record_xbar: bool = False,
        backend: str | None = None, f_star="auto") -> RunTrace:
    """Initialize and advance T rounds, probing diagnostics at a stride.

    Deterministic in (objective, config, schedule, seed): all randomness is
    counter-based. Probes land at every multiple of probe_stride plus the
    final round. phi_window > 0 records the last phi_window mixing steps and
    fills the weighted-norm columns for probes inside that window; it also
    forces the reference numpy path so the trajectory never depends on which
    backend recorded it. Raises NumericalDivergenceError with the partial
    trace attached if iterates blow up.
    """
    if probe_stride < 1:
        raise ValueError(f"probe stride must be >= 1, got {probe_stride}")
    if f_star == "auto":
        f_star = getattr(objective, "f_star", None)
    chosen = resolve_backend(backend)
    oracle = StochasticOracle(objective, seed=seed, shared_noise=shared_noise)
    state = init(oracle, config, x0=x0)
    T = config.T
    n, d = state.n, state.dim
    alpha, beta = config.alpha, config.effective_beta
    window = min(phi_window, T)
    use_kernel = chosen == "numba" and window == 0 and _kernel_eligible(
        objective, config, schedule, phi_window)

    rows = [_probe_row(state, objective, f_star)]
    xbar_hist = np.empty((T + 1, d)) if record_xbar else None
    if xbar_hist is not None:
        xbar_hist[0] = state.x.mean(axis=0)
    y_inv_sup = 1.0 / float(state.y.min())
    win_start = T - window
    wt_list: list[np.ndarray] = []
    z_hist: list[np.ndarray] = []
    h_hist: list[np.ndarray] = []
    probe_ts = set(range(0, T + 1, probe_stride))
    probe_ts.add(T)

    def snapshot_window(st: SwarmState):
        z_hist.append(st.z.copy())
        h_hist.append(st.g / st.y[:, None])

    diverged_at = -1
    try:
        if use_kernel:
            from . import _kernels

            W_stack = schedule.mixing_stack()
            xv = np.ascontiguousarray(state.x[:, 0])
            yv = state.y.copy()
            vv = np.ascontiguousarray(state.v[:, 0])
            gv = np.ascontiguousarray(state.g[:, 0])
            xb = xbar_hist[:, 0] if xbar_hist is not None else np.empty(0)
            t = 0
            while t < T:
                t_next = min((t // probe_stride + 1) * probe_stride, T)
                status, y_inv = _kernels.pl_sine_chain(
                    xv, yv, vv, gv, W_stack, t, t_next - t, alpha, beta,
                    objective.noise_sigma, objective.a, np.uint64(seed),
                    shared_noise, config.variant == "push-sgd",
                    xb, xbar_hist is not None, GUARD_LIMIT)
                y_inv_sup = max(y_inv_sup, y_inv)
                if status >= 0:
                    raise NumericalDivergenceError(status, "kernel guard tripped")
                steps = t_next - t
                t = t_next
                oracle.sfo_count += steps * (n if config.variant == "push-sgd" else 2 * n)
                state = SwarmState(x=xv[:, None].copy(), y=yv.copy(),
                                   z=(xv / yv)[:, None], v=vv[:, None].copy(),
                                   g=gv[:, None].copy(), t=t, sfo=oracle.sfo_count)
                if t in probe_ts:
                    rows.append(_probe_row(state, objective, f_star))
        else:
            for t in range(T):
                _, W = schedule.at(t)
                if t >= win_start:
                    if not z_hist:
                        snapshot_window(state)
                    y_before = state.y.copy()
                if config.variant == "push-sgd":
                    state = step_push_sgd(state, W, oracle, alpha)
                else:
                    state = step_push_asgd(state, W, oracle, alpha, beta)
                y_inv_sup = max(y_inv_sup, 1.0 / float(state.y.min()))
                if xbar_hist is not None:
                    xbar_hist[state.t] = state.x.mean(axis=0)
                if t >= win_start:
                    wt_list.append(diagnostics.build_w_tilde(W, y_before, state.y))
                    snapshot_window(state)
                if state.t in probe_ts:
                    rows.append(_probe_row(state, objective, f_star))
    except NumericalDivergenceError as err:
        diverged_at = err.step
        err.partial_trace = _assemble(rows, objective, config, seed, y_inv_sup,
                                      wt_list, z_hist, h_hist, win_start,
                                      xbar_hist, diverged_at)
        raise

    return _assemble(rows, objective, config, seed, y_inv_sup, wt_list,
                     z_hist, h_hist, win_start, xbar_hist, diverged_at)


def _assemble(rows, objective, config, seed, y_inv_sup, wt_list, z_hist,
              h_hist, win_start, xbar_hist, diverged_at) -> RunTrace:
    # deduplicate the first row if T == 0 probed twice
    seen, uniq = set(), []
    for r in rows:
        if r["t"] not in seen:
            seen.add(r["t"])
            uniq.append(r)
    uniq.sort(key=lambda r: r["t"])

    phis = None
    lambdas = None
    if wt_list:
        phis = diagnostics.phi_backward(wt_list)
        lambdas = np.array([
            diagnostics.empirical_contraction(z_hist[k], wt_list[k] @ z_hist[k],
                                              phis[k], phis[k + 1])
            for k in range(len(wt_list))])
        by_t = {win_start + k: k for k in range(len(z_hist))}
        for r in uniq:
            k = by_t.get(r["t"])
            if k is None:
                continue
            r["l2_z"] = diagnostics.l_norm_sq(z_hist[k], phis[k])
            r["l2_h"] = diagnostics.l_norm_sq(h_hist[k], phis[k])
            if k < len(wt_list):
                r["lambda_emp"] = float(lambdas[k])

    trace = RunTrace(
        variant=config.variant, seed=seed, alpha=config.alpha,
        beta=config.effective_beta, T=config.T, n=objective.n, dim=objective.dim,
        t=np.array([r["t"] for r in uniq], dtype=np.int64),
        sfo=np.array([r["sfo"] for r in uniq], dtype=np.int64),
        constants=diagnostics.analysis_constants(
            objective.n, objective.dim, y_inv_sup, phis, lambdas),
        xbar_hist=xbar_hist,
        diverged=diverged_at >= 0,
        divergence_step=diverged_at,
    )
    for col in TRACE_COLUMNS[2:]:
        setattr(trace, col, np.array([r[col] for r in uniq], dtype=np.float64))
    return trace
