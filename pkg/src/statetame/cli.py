"""Batch front end: ``statetame run --config FILE --out DIR`` and ``statetame presets``.

Each run writes ``results.csv`` (schema per task, documented in the README)
and ``summary.json``.  Exit codes: 0 success, 1 other engine failure,
2 invalid config or arguments (nothing written), 3 pricing refused by the
arbitrage screen, 4 hedging infeasible, 5 explosion or non-finite
coefficients.  On codes 1 and 3 to 5 only the summary is written.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, ampricer, config as config_mod, europricer, flow as flow_mod, market, presets, wealth
from .errors import (
    ExplosionError,
    HedgingInfeasibleError,
    InvalidInputError,
    ModelEvaluationError,
    NoSolutionError,
    PricingRefusedError,
    StateTameError,
    UnsupportedOperationError,
    ValidationError,
    WitnessUnavailableError,
)
from .noise import generate as generate_noise

EXIT_OK, EXIT_FAILURE, EXIT_INVALID, EXIT_REFUSED, EXIT_INFEASIBLE, EXIT_EXPLOSION = 0, 1, 2, 3, 4, 5


class _Result:
    """Rows for results.csv plus key numbers and screen verdicts for the summary."""

    def __init__(self, header):
        self.header = list(header)
        self.rows = []
        self.numbers = {}
        self.screens = {}

    def add(self, *row):
        self.rows.append(row)

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue().encode()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _ensemble(cfg, m, grid, threads, first_index=0, paths=None):
    return flow_mod.simulate_ensemble(
        m, grid, cfg.seed, paths or cfg.paths, first_index=first_index, threads=threads
    )


def task_simulate(cfg, m, threads):
    grid = cfg.build_grid(m)
    f = _ensemble(cfg, m, grid, threads)
    if f.any_exploded:
        raise ExplosionError("simulated state became non-finite", f.first_explosion())
    res = _Result(["time"] + [f"mean_P{i}" for i in range(m.n + 1)] + ["mean_B", "mean_Z", "se_Z", "mean_H"])
    for k, t in enumerate(f.times):
        z, zse = _mean_se(f.Z[:, k])
        res.add(t, *f.P[:, k].mean(axis=0), f.B[:, k].mean(), z, zse, f.H[:, k].mean())
    z, zse = _mean_se(f.Z[:, -1])
    shadow_gap = float(np.max(np.abs(f.P[:, :, 0] - m.p0[0] * f.H)))
    res.numbers.update(mean_Z_T=z, se_Z_T=zse, shadow_gap=shadow_gap, max_kappa=f.max_kappa)
    res.screens["Z_martingale_3se"] = bool(abs(z - 1.0) <= 3 * zse)
    res.screens["shadow_identity"] = bool(shadow_gap < 1e-12 * max(1.0, m.p0[0]))
    path = wealth.simulate_wealth(m, f, wealth.arbitrage_portfolio(m), 0.0)
    opp = wealth.check_arbitrage_opportunity(path)
    res.numbers.update(arbitrage_gain_mean_T=float(path.G[:, -1].mean()), frac_positive=opp.frac_positive)
    res.screens["arbitrage_opportunity"] = bool(opp.opportunity)
    return res


def task_check_market(cfg, m, threads):
    rel = float(cfg.task.get("box_rel", 0.5))
    samples = int(cfg.task.get("samples", market.DEFAULT_SAMPLES))
    box = market.Box.around(m, rel)
    arb = market.is_state_arbitrage_free(m, box, samples, cfg.tol("arbitrage"))
    comp = market.completeness_check(m, box, samples, cfg.task.get("witness_indices"), cfg.tol("rank"))
    lip = market.lipschitz_screen(m, box)
    res = _Result(["check", "verdict", "metric"] + [f"p{i}" for i in range(m.n + 1)] + ["t"])
    res.add("arbitrage_free", arb.free, arb.worst_kappa_norm, *arb.witness_p, arb.witness_t)
    res.add("complete", comp.complete, comp.min_singular_ratio, *comp.witness_p, comp.witness_t)
    res.add("lipschitz_finite", lip.finite, lip.max_quotient, *([""] * (m.n + 2)))
    res.numbers.update(
        worst_kappa_norm=arb.worst_kappa_norm, rank_min=arb.rank_min, rank_max=arb.rank_max,
        min_rank=comp.min_rank, max_lipschitz_quotient=lip.max_quotient,
    )
    res.screens.update(arbitrage_free=arb.free, complete=comp.complete, lipschitz_finite=lip.finite)
    return res


def task_price_eu(cfg, m, threads):
    claim = cfg.build_claim(m)
    f = _ensemble(cfg, m, cfg.build_grid(m), threads)
    pr = europricer.price_european(m, claim, f, cfg.tol("kappa"))
    res = _Result(["claim", "price", "se"])
    res.add(claim.name, pr.price, pr.se)
    res.numbers.update(price=pr.price, se=pr.se, paths=pr.paths)
    return res


def task_hedge_eu(cfg, m, threads):
    claim = cfg.build_claim(m)
    grid = cfg.build_grid(m)
    if "witness_indices" in cfg.task:
        rep = europricer.incompleteness_witness(
            m, grid, cfg.task["witness_indices"], cfg.paths, cfg.seed, tol=cfg.tol("hedge")
        )
        if not rep.hedgeable:
            raise HedgingInfeasibleError("incompleteness witness is not hedgeable", rep.residual)
        res = _Result(["claim", "hedgeable", "residual"])
        res.add("witness", True, 0.0)
        return res
    rep = europricer.hedge_european(
        m, claim, grid, cfg.paths, cfg.seed, int(cfg.task.get("degree", 4)), threads, cfg.tol("hedge")
    )
    res = _Result(["claim", "price", "se", "replication_rmse"])
    res.add(claim.name, rep.price, rep.se, rep.replication_rmse)
    res.numbers.update(price=rep.price, se=rep.se, replication_rmse=rep.replication_rmse)
    res.screens["replication_within_5pct"] = bool(rep.replication_rmse < 0.05 * abs(rep.price))
    return res


def task_price_am(cfg, m, threads):
    claim = cfg.build_claim(m)
    grid = cfg.build_grid(m)
    degree = int(cfg.task.get("degree", 4))
    index = ampricer.exercise_indices(grid.steps, cfg.grid["exercise_dates"])
    test_paths = int(cfg.task.get("test_paths", cfg.paths))
    train = _ensemble(cfg, m, grid, threads)
    test = _ensemble(cfg, m, grid, threads, first_index=cfg.paths, paths=test_paths)
    env = ampricer.price_american(m, claim, train, index, degree, test_flow=test)
    sm = ampricer.check_snell_supermartingale(env.data, env.Ybar)
    res = _Result(["claim", "lower", "lower_se", "upper", "upper_se"])
    res.add(claim.name, env.lower.mean, env.lower.se, env.upper.mean, env.upper.se)
    res.numbers.update(
        lower=env.lower.mean, lower_se=env.lower.se, upper=env.upper.mean, upper_se=env.upper.se,
        supermartingale_worst_z=sm.worst_increase_z,
    )
    res.screens["snell_supermartingale"] = sm.ok
    if cfg.task.get("dominating"):
        dom = ampricer.dominating_hedge(m, claim, train, test, index, degree, cfg.tol("dominating_rel"))
        res.numbers.update(
            dominating_price=dom.price, rms_shortfall=dom.domination.rms_shortfall,
            worst_wealth_gap=dom.domination.worst_wealth_gap,
        )
        res.screens["dominating_hedge"] = bool(dom.verdict)
    return res


def task_consistency(cfg, m, threads):
    grid = cfg.build_grid(m)
    s = float(cfg.task.get("s", 0.0))
    s_mid = float(cfg.task.get("s_mid", grid.times[grid.steps // 2]))
    t = float(cfg.task.get("t", m.T))
    factors = tuple(cfg.task.get("factors", [1, 2, 4, 8]))
    nz = generate_noise(grid, m.d, cfg.seed, 0, cfg.paths)
    rep = flow_mod.check_consistency(m, nz, s, s_mid, t, None, factors)
    res = _Result(["factor", "step", "mean_gap"])
    for f, h, e in zip(factors, rep.steps, rep.gaps):
        res.add(f, h, e)
    res.numbers.update(max_abs_gap=rep.max_abs_gap, convergence_slope=rep.convergence_slope)
    if 1 in factors:
        res.screens["discrete_flow_property"] = bool(rep.gaps[factors.index(1)] < 1e-12 * max(1.0, float(np.max(m.p0))))
    if np.isfinite(rep.convergence_slope):
        res.screens["refinement_slope_ge_half"] = bool(rep.convergence_slope >= 0.5)
    return res


def task_cocycle(cfg, m, threads):
    grid = cfg.build_grid(m)
    s = float(cfg.task.get("s", grid.times[grid.steps // 2]))
    t = float(cfg.task.get("t", m.T - s))
    nz = generate_noise(grid, m.d, cfg.seed, 0, cfg.paths)
    gap = flow_mod.check_cocycle(m, nz, s, t)
    res = _Result(["s", "t", "max_gap"])
    res.add(s, t, gap)
    res.numbers["max_gap"] = gap
    res.screens["cocycle"] = bool(gap < 1e-12 * max(1.0, float(np.max(m.p0))))
    return res


DEFAULT_PERTURBATIONS = {"t": [1 / 400, 1 / 200, 1 / 100, 1 / 50, 1 / 25]}


def task_moment_exponents(cfg, m, threads):
    grid = cfg.build_grid(m)
    gamma = float(cfg.task.get("gamma", 2.0))
    pert = cfg.task.get("perturbations", DEFAULT_PERTURBATIONS)
    nz = generate_noise(grid, m.d, cfg.seed, 0, cfg.paths)
    base = {
        "x": float(cfg.task.get("x", 0.0)),
        "p": m.p0,
        "s": float(cfg.task.get("s", 0.0)),
        "t": float(cfg.task.get("base_t", grid.times[grid.steps // 2])),
    }
    rep = ampricer.moment_exponent_diagnostic(ampricer.flow_sampler(m, nz), base, pert, gamma)
    res = _Result(["argument", "exponent", "constant"])
    for name in pert:
        if name in rep.exponents:
            res.add(name, rep.exponents[name], rep.constants[name])
        else:
            res.add(name, "degenerate", "")
    res.numbers.update({f"alpha_{k}": v for k, v in rep.exponents.items()})
    res.numbers["reciprocal_sum"] = rep.reciprocal_sum
    res.numbers["condition_met"] = rep.condition_met
    return res


TASKS = {
    "simulate": task_simulate,
    "check-market": task_check_market,
    "price-eu": task_price_eu,
    "hedge-eu": task_hedge_eu,
    "price-am": task_price_am,
    "consistency": task_consistency,
    "cocycle": task_cocycle,
    "condition1": task_moment_exponents,
}


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, PricingRefusedError):
        return EXIT_REFUSED
    if isinstance(exc, HedgingInfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ExplosionError, ModelEvaluationError)):
        return EXIT_EXPLOSION
    if isinstance(exc, (ValidationError, InvalidInputError, UnsupportedOperationError, WitnessUnavailableError)):
        return EXIT_INVALID
    return EXIT_FAILURE


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


def run(config_path, out_dir, seed=None, threads=1, paths=None) -> int:
    """Run one configured task; returns the process exit code."""
    try:
        if threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = config_mod.load(config_path).with_overrides(seed, paths)
        m = cfg.build_market()
    except StateTameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    summary = {
        "task": cfg.task_name,
        "version": __version__,
        "inputs_digest": cfg.digest(),
        "seed": cfg.seed,
        "paths": cfg.paths,
        "threads": threads,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            res = TASKS[cfg.task_name](cfg, m, threads)
    except StateTameError as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        if code == EXIT_INVALID:
            return code
        error = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NoSolutionError):
            error["residual"] = exc.residual
        if isinstance(exc, ExplosionError):
            error["time"] = exc.time
        summary.update(status="error", exit_code=code, error=error)
        _write(out_dir, summary, None)
        return code

    data = res.csv_bytes()
    summary.update(
        status="ok",
        exit_code=EXIT_OK,
        results_digest=hashlib.sha256(data).hexdigest(),
        results=_json_safe(res.numbers),
        screens=_json_safe(res.screens),
    )
    _write(out_dir, summary, data)
    return EXIT_OK


def _write(out_dir, summary, data):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is not None:
        (out / "results.csv").write_bytes(data)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def list_presets() -> str:
    return presets.listing()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="statetame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the task described by a config file")
    p_run.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override noise.seed")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p_run.add_argument("--paths", type=int, default=None, help="override noise.paths")
    sub.add_parser("presets", help="list built-in markets and claims")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.command == "presets":
        print(list_presets())
        return EXIT_OK
    return run(args.config, args.out, args.seed, args.threads, args.paths)


if __name__ == "__main__":
    sys.exit(main())
