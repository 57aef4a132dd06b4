"""Command-line front end.

Subcommands:
  run        execute an experiment config, write trace CSVs + summary.json
  compare    run and summarize algorithm comparisons (medians, sign test)
  rate       run the step-size-scaled rate probe over a list of horizons
  selftest   run the bundled invariant suites on small fixtures
  phi-check  validate the backward stochastic-vector construction on a
             pure-mixing run

Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 IO error.
Output CSVs are byte-reproducible for a fixed config; wall-clock metadata
lives only under the summary's "meta" key, which is excluded from
fingerprints. The default output directory can be set via PUSHOPT_OUT_DIR.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, graph, oracle, runner
from .algo import AlgoConfig, RunTrace, TRACE_COLUMNS, init, step_push_asgd
from .backend import ENV_VAR
from .oracle import StochasticOracle
from .runner import ExperimentConfig, PRESETS, build_objective, build_schedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

_TOP_KEYS = {"preset", "objective", "topology", "algorithms", "seeds", "x0",
             "probe_stride", "phi_window", "shared_noise", "workers", "out_dir"}
_OBJECTIVE_KEYS = {"kind", "n", "d", "sigma", "a_scheme", "a_scale", "a_seed",
                   "samples_per_node", "lam", "data_seed"}
_TOPOLOGY_KEYS = {"mode", "n", "p", "seed"}
_ALGO_KEYS = {"variant", "alpha", "beta", "init_batch", "T"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


def _suggest(key: str, allowed) -> str:
    close = difflib.get_close_matches(key, allowed, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _check_keys(doc: dict, allowed: set, prefix: str, errors: list[str]):
    for key in doc:
        if key not in allowed:
            errors.append(f"unknown key {prefix}{key}{_suggest(key, allowed)}")


def parse_config(text_or_path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse a JSON config document (or a path to one) into a validated
    ExperimentConfig. Presets fill defaults; dotted-key overrides apply
    last. All validation errors are reported together."""
    path = Path(text_or_path)
    text = path.read_text() if path.exists() else str(text_or_path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"invalid JSON: {err}"])
    return config_from_dict(doc, overrides)


def config_from_dict(doc: dict, overrides: list[str] | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be an object"])
    doc = dict(doc)
    preset = doc.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}"
                               + _suggest(str(preset), PRESETS)])
        merged = json.loads(json.dumps(PRESETS[preset]))
        merged.update(doc)
        doc = merged
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError([f"override {item!r} must look like key.path=value"])
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _apply_override(doc, key.split("."), value)

    errors: list[str] = []
    _check_keys(doc, _TOP_KEYS - {"preset"}, "", errors)
    objective = doc.get("objective")
    if not isinstance(objective, dict):
        errors.append("objective: required object missing")
    else:
        _check_keys(objective, _OBJECTIVE_KEYS, "objective.", errors)
        if objective.get("kind") not in ("pl-sine", "quadratic", "logistic"):
            errors.append(f"objective.kind: unknown kind {objective.get('kind')!r}")
    topology = doc.get("topology")
    if not isinstance(topology, dict):
        errors.append("topology: required object missing")
    else:
        _check_keys(topology, _TOPOLOGY_KEYS, "topology.", errors)
        if "p" in topology and not 0.0 < topology["p"] <= 1.0:
            errors.append(f"topology.p: must be in (0, 1], got {topology['p']}")
    algorithms = doc.get("algorithms")
    if not isinstance(algorithms, list) or not algorithms:
        errors.append("algorithms: need a non-empty list")
    else:
        for idx, spec in enumerate(algorithms):
            _check_keys(spec, _ALGO_KEYS, f"algorithms.{idx}.", errors)
            spec.setdefault("variant", "push-asgd")
            spec.setdefault("alpha", 0.01)
            spec.setdefault("beta", 0.015)
            spec.setdefault("init_batch", 1)
            spec.setdefault("T", 100)
            try:
                AlgoConfig(**{k: spec[k] for k in _ALGO_KEYS if k in spec})
            except (ValueError, TypeError) as err:
                errors.append(f"algorithms.{idx}: {err}")
    seeds = doc.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        errors.append("seeds: need a non-empty list of integers")
    elif not all(isinstance(s, int) and s >= 0 for s in seeds):
        errors.append("seeds: entries must be non-negative integers")
    if "probe_stride" in doc and (not isinstance(doc["probe_stride"], int)
                                  or doc["probe_stride"] < 1):
        errors.append(f"probe_stride: must be a positive integer, got {doc.get('probe_stride')}")
    if "workers" in doc and (not isinstance(doc["workers"], int) or doc["workers"] < 1):
        errors.append(f"workers: must be a positive integer, got {doc.get('workers')}")
    if errors:
        raise ConfigError(errors)
    doc.setdefault("out_dir", os.environ.get("PUSHOPT_OUT_DIR", "results"))
    return ExperimentConfig(**doc)


def _apply_override(doc, keys: list[str], value):
    node = doc
    for key in keys[:-1]:
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node.setdefault(key, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def _json_safe(value):
    """NaN -> null so emitted documents stay strict JSON."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def emit_trace(trace: RunTrace, out_dir: str | Path, cell_fingerprint: str) -> Path:
    """Write one trace CSV named trace_<fingerprint>_<seed>.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"trace_{cell_fingerprint}_{trace.seed}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for k in range(len(trace.t)):
            writer.writerow([_fmt(trace.metric(c)[k]) for c in TRACE_COLUMNS])
    return path


def emit_summary(config: ExperimentConfig, traces: list[RunTrace],
                 out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "fingerprint": runner.fingerprint(config),
        "config": json.loads(runner.canonical_json(config)),
        "constants": _json_safe(traces[0].constants if traces else {}),
        "final_metrics": _json_safe([
            {"variant": tr.variant, "seed": tr.seed,
             "fingerprint": tr.meta.get("fingerprint", ""),
             "diverged": tr.diverged, "divergence_step": tr.divergence_step,
             "final_gap": tr.final("gap"),
             "final_grad_norm_sq": tr.final("grad_norm_sq"),
             "sfo": int(tr.sfo[-1]) if len(tr.sfo) else 0}
            for tr in traces
        ]),
        "meta": {"wall_seconds": [tr.meta.get("wall_seconds") for tr in traces]},
    }
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# selftest suites

def check_mixing_matrix(W: np.ndarray, tol: float = 1e-12) -> bool:
    """Column sums 1 within tol, entries in [0, 1]."""
    return (np.all(W >= 0.0) and np.all(W <= 1.0)
            and np.max(np.abs(W.sum(axis=0) - 1.0)) <= tol)


def _suite_column_stochastic() -> tuple[bool, str]:
    schedule = graph.cyclic_er_rings(12, p=0.2, seed=3)
    ok = all(check_mixing_matrix(schedule.at(t)[1]) for t in range(6))
    return ok, "column sums within 1e-12 on 6 scheduled rounds"

def _suite_conservation() -> tuple[bool, str]:
    obj = oracle.make_quadratic(8, 3, seed=1, noise_sigma=0.3)
    orc = StochasticOracle(obj, seed=5)
    cfg = AlgoConfig(variant="push-asgd", alpha=0.05, beta=0.1, T=200)
    schedule = graph.cyclic_er_rings(8, p=0.3, seed=2)
    state = init(orc, cfg)
    worst = 0.0
    for t in range(cfg.T):
        _, W = schedule.at(t)
        prev = state
        state = step_push_asgd(state, W, orc, cfg.alpha, cfg.beta)
        worst = max(worst,
                    abs(state.y.sum() - 8),
                    float(np.max(np.abs(state.g.sum(axis=0) - state.v.sum(axis=0)))),
                    float(np.max(np.abs(state.x.mean(axis=0)
                                        - prev.x.mean(axis=0)
                                        + cfg.alpha * prev.g.mean(axis=0)))))
    return worst <= 1e-9, f"mass/tracking/average-dynamics drift {worst:.2e} <= 1e-9"

def _suite_consensus() -> tuple[bool, str]:
    n = 16
    gen = np.random.Generator(np.random.PCG64(11))
    x0 = gen.uniform(-1, 1, (n, 2))
    obj = oracle.make_quadratic(n, 2, seed=1)
    cfg = AlgoConfig(variant="push-sgd", alpha=0.0, T=400)
    trace_dev = _pure_mixing_deviation(obj, cfg, graph.cyclic_er_rings(n, 0.1, 5), x0)
    return trace_dev <= 1e-8, f"max |z - xbar0| {trace_dev:.2e} <= 1e-8 after 400 rounds"

def _suite_unbiasedness() -> tuple[bool, str]:
    obj = oracle.make_pl_sine(4, 0.5)
    orc = StochasticOracle(obj, seed=9)
    draws = np.array([orc.stochastic_gradient(1, t, [0.7])[0] for t in range(20000)])
    err = abs(draws.mean() - obj.local_grad(1, [0.7])[0])
    bound = 4 * 0.5 / math.sqrt(20000)
    return err <= bound, f"mean error {err:.2e} <= 4 sigma/sqrt(N) = {bound:.2e}"

def _suite_collapse() -> tuple[bool, str]:
    obj = oracle.make_pl_sine(6, 0.0)
    schedule = graph.cyclic_er_rings(6, p=0.3, seed=4)
    worst = 0.0
    for beta in (0.0, 0.5, 1.0):
        cfg = AlgoConfig(variant="push-asgd", alpha=0.05, beta=beta, T=100)
        orc = StochasticOracle(obj, seed=3)
        state = init(orc, cfg, x0=2.0)
        for t in range(cfg.T):
            _, W = schedule.at(t)
            state = step_push_asgd(state, W, orc, cfg.alpha, cfg.beta)
            worst = max(worst, float(np.max(np.abs(state.v - obj.grad_all(state.z)))))
    return worst <= 1e-10, f"estimator collapse {worst:.2e} <= 1e-10 (zero-noise oracle)"

def _suite_phi() -> tuple[bool, str]:
    stats = phi_mixing_stats(n=10, rounds=60, p=0.15, seed=6)
    ok = (stats["sum_err"] <= 1e-10 and stats["residual"] <= 1e-9
          and stats["lambda_ok"])
    return ok, (f"phi sums off {stats['sum_err']:.1e} <= 1e-10, residual "
                f"{stats['residual']:.1e} <= 1e-9, contraction < 1 on active rounds")


def _pure_mixing_deviation(obj, cfg, schedule, x0) -> float:
    orc = StochasticOracle(obj, seed=1)
    state = init(orc, cfg, x0=x0)
    xbar0 = state.x.mean(axis=0)
    from .algo import step_push_sgd
    for t in range(cfg.T):
        _, W = schedule.at(t)
        state = step_push_sgd(state, W, orc, cfg.alpha)
    return float(np.max(np.abs(state.z - xbar0[None, :])))


SELFTEST_SUITES = (
    ("column-stochasticity", _suite_column_stochastic),
    ("conservation", _suite_conservation),
    ("push-sum-consensus", _suite_consensus),
    ("oracle-unbiasedness", _suite_unbiasedness),
    ("deterministic-collapse", _suite_collapse),
    ("phi-contraction", _suite_phi),
)


def selftest(out=None) -> int:
    """Run every invariant suite; exit code 0 iff all pass."""
    out = out if out is not None else sys.stdout
    failures = 0
    for name, fn in SELFTEST_SUITES:
        ok, detail = fn()
        failures += 0 if ok else 1
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", file=out)
    return EXIT_OK if failures == 0 else 1


def phi_mixing_stats(n: int, rounds: int, p: float, seed: int) -> dict:
    """Pure-mixing run with recorded companion matrices and backward phis."""
    schedule = graph.cyclic_er_rings(n, p=p, seed=seed)
    gen = np.random.Generator(np.random.PCG64(seed))
    z = gen.uniform(-1.0, 1.0, (n, 1))
    y = np.ones(n)
    wt_list = []
    z_hist = [z.copy()]
    for t in range(rounds):
        _, W = schedule.at(t)
        y_next = W @ y
        wt = diagnostics.build_w_tilde(W, y, y_next)
        wt_list.append(wt)
        z = wt @ z
        z_hist.append(z.copy())
        y = y_next
    phis = diagnostics.phi_backward(wt_list)
    sum_err = float(np.max(np.abs(phis.sum(axis=1) - 1.0)))
    residual = max(float(np.max(np.abs(phis[k + 1] @ wt_list[k] - phis[k])))
                   for k in range(rounds))
    lambdas = np.array([diagnostics.empirical_contraction(
        z_hist[k], z_hist[k + 1], phis[k], phis[k + 1]) for k in range(rounds)])
    active = np.array([diagnostics.l_norm_sq(z_hist[k], phis[k]) > 1e-10
                       for k in range(rounds)])
    return {
        "sum_err": sum_err,
        "residual": residual,
        "lambda_max": float(lambdas[active].max()) if active.any() else 0.0,
        "active_rounds": int(active.sum()),
        "lambda_ok": bool(np.all(lambdas[active] < 1.0)),
    }


def phi_check(n: int, rounds: int, p: float, seed: int, out=None) -> int:
    """Validate the backward phi construction on a pure-mixing run."""
    out = out if out is not None else sys.stdout
    stats = phi_mixing_stats(n, rounds, p, seed)
    print(f"phi sums off by {stats['sum_err']:.2e} (tol 1e-10)", file=out)
    print(f"defining-relation residual {stats['residual']:.2e} (tol 1e-9)", file=out)
    print(f"max contraction factor {stats['lambda_max']:.6f} over "
          f"{stats['active_rounds']} active rounds (must stay < 1)", file=out)
    ok = (stats["sum_err"] <= 1e-10 and stats["residual"] <= 1e-9
          and stats["lambda_ok"])
    print("PASS" if ok else "FAIL", file=out)
    return EXIT_OK if ok else 1


# ---------------------------------------------------------------------------
# subcommand drivers

def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config(args.config, args.override)
    elif args.preset:
        cfg = config_from_dict({"preset": args.preset}, args.override)
    else:
        raise ConfigError(["provide --config PATH or --preset NAME"])
    if args.out:
        cfg.out_dir = args.out
    if args.workers:
        cfg.workers = args.workers
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    traces = runner.run_experiment(cfg, backend=args.backend)
    for tr in traces:
        emit_trace(tr, cfg.out_dir, tr.meta["fingerprint"])
    emit_summary(cfg, traces, cfg.out_dir)
    print(f"wrote {len(traces)} traces to {cfg.out_dir}")
    return EXIT_DIVERGED if any(tr.diverged for tr in traces) else EXIT_OK


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    traces = runner.run_experiment(cfg, backend=args.backend)
    groups = runner.group_traces(traces)
    report = {}
    for idx, group in sorted(groups.items()):
        variant = group[0].variant
        finals = [tr.final("gap") for tr in group]
        grads = [tr.final("grad_norm_sq") for tr in group]
        report[f"{idx}:{variant}"] = {
            "median_final_gap": float(np.median(finals)),
            "median_final_grad_norm_sq": float(np.median(grads)),
            "seeds": len(group),
        }
        print(f"{variant:12s} median final gap {np.median(finals):.6g}   "
              f"median final |grad|^2 {np.median(grads):.6g}")
    if len(groups) == 2:
        a, b = (groups[i] for i in sorted(groups))
        metric = "grad_norm_sq" if math.isnan(a[0].final("gap")) else "gap"
        pairs = [(x.final(metric), y.final(metric)) for x, y in zip(a, b)]
        wins = sum(1 for x, y in pairs if x < y)
        losses = sum(1 for x, y in pairs if x > y)
        p = runner.sign_test_p(wins, losses)
        report["sign_test"] = {"metric": metric, "wins": wins,
                               "losses": losses, "p_value": p}
        print(f"sign test ({a[0].variant} < {b[0].variant} on final {metric}): "
              f"{wins} wins / {losses} losses, one-sided p = {p:.4g}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "compare.json").write_text(
        json.dumps(_json_safe(report), sort_keys=True, indent=2) + "\n")
    return EXIT_DIVERGED if any(tr.diverged for tr in traces) else EXIT_OK


def _cmd_rate(args) -> int:
    cfg = _load_config(args)
    objective = build_objective(cfg.objective)
    schedule = build_schedule(cfg.topology)
    result = runner.rate_probe(objective, schedule, args.T, cfg.seeds,
                               variant=args.variant, x0=cfg.x0,
                               backend=args.backend)
    for T, med in zip(result.T_values, result.medians):
        print(f"T={T:<8d} median averaged |grad|^2 = {med:.6g}")
    print(f"fitted log-log slope: {result.slope:.4f}")
    if result.diverged_cells:
        print(f"diverged cells (reduce c_alpha): {result.diverged_cells}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "rate.json").write_text(json.dumps(_json_safe(
        {"T": result.T_values, "medians": result.medians, "slope": result.slope,
         "alphas": result.alphas, "betas": result.betas, "batches": result.batches,
         "diverged": result.diverged_cells}), sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pushopt",
        description="decentralized stochastic optimization simulator over "
                    "time-varying directed networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to a JSON experiment config")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="named preset config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="parallel cell workers")
        p.add_argument("--backend", choices=("auto", "numba", "numpy"),
                       help=f"execution backend (default from ${ENV_VAR})")
        p.add_argument("override", nargs="*",
                       help="dotted-key overrides, e.g. algorithms.0.alpha=0.05")

    add_common(sub.add_parser("run", help="run an experiment, emit traces"))
    add_common(sub.add_parser("compare", help="run and compare algorithms"))
    rate = sub.add_parser("rate", help="slope of averaged grad norm vs horizon")
    add_common(rate)
    rate.add_argument("--T", type=lambda s: [int(v) for v in s.split(",")],
                      default=[300, 1000, 3000, 10000],
                      help="comma-separated horizon list, e.g. 300,1000,3000")
    rate.add_argument("--variant", default="push-asgd")
    sub.add_parser("selftest", help="run bundled invariant suites")
    phic = sub.add_parser("phi-check", help="validate backward phi construction")
    phic.add_argument("--n", type=int, default=20)
    phic.add_argument("--rounds", type=int, default=500)
    phic.add_argument("--p", type=float, default=0.1)
    phic.add_argument("--seed", type=int, default=7)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "rate":
            return _cmd_rate(args)
        if args.command == "selftest":
            return selftest()
        if args.command == "phi-check":
            return phi_check(args.n, args.rounds, args.p, args.seed)
    except ConfigError as err:
        for line in err.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
