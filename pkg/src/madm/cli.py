"""Command line entry point ``madm``.

Exit codes: 0 when every check passes, 1 when a check fails or a run cannot
complete, 2 on a configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import duality, levy, process, simulate, suites
from .config import ConfigError, RunConfig, parse_config
from .report import Report, write_report

__all__ = ["main", "run_command", "build_parser"]

COMMANDS = ("simulate", "stationary", "profile", "correlations", "verify")


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="madm", description="Simulate and verify boundary-driven non-compact spin-chain processes.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="master seed, overrides sim.seed")
        p.add_argument("--mcap", type=int, default=None, help="truncation level, overrides truncation.m_cap")
        p.add_argument("--tol", type=float, default=None, help="tail tolerance, overrides truncation.tail_tol")

    for name in COMMANDS[:-1]:
        common(sub.add_parser(name))
    v = sub.add_parser("verify")
    v.add_argument("suite", choices=suites.SUITES + ("all",))
    common(v)
    return ap


def _apply_flags(cfg: RunConfig, seed, mcap, tol) -> RunConfig:
    sim, trunc = cfg.sim, cfg.truncation
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        sim = dataclasses.replace(sim, seed=seed)
    if mcap is not None:
        if mcap < 1:
            raise UsageError("--mcap must be positive")
        trunc = dataclasses.replace(trunc, m_cap=mcap)
    if tol is not None:
        if not tol > 0:
            raise UsageError("--tol must be positive")
        trunc = dataclasses.replace(trunc, tail_tol=tol)
    return dataclasses.replace(cfg, sim=sim, truncation=trunc)


def _init(cfg: RunConfig):
    if cfg.sim.init is not None:
        return list(cfg.sim.init)
    if cfg.model.kind == "levy":
        return [0.0] * cfg.model.N
    return [0] * cfg.model.N


def _linear_profile(cfg: RunConfig) -> np.ndarray | None:
    """Stationary means linear between the reservoir densities (spin 1/2 and Levy)."""
    m = cfg.model
    if m.kind == "levy":
        a, b = 1 / m.lambda_left, 1 / m.lambda_right
    elif m.kind == "spin_half" and not m.closed:
        a, b = m.beta_left / (1 - m.beta_left), m.beta_right / (1 - m.beta_right)
    else:
        return None
    i = np.arange(1, m.N + 1)
    return a + (b - a) * i / (m.N + 1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _simulate(cfg: RunConfig, out: Path) -> Report:
    rep = Report()
    sim = cfg.sim
    seeds = simulate.trajectory_seeds(sim.seed, sim.n_traj)
    trajs = []
    for j, sd in enumerate(seeds):
        if cfg.model.kind == "levy":
            spec = levy.LevySpec(cfg.model.N, cfg.model.lambda_left, cfg.model.lambda_right)
            tr = levy.levy_simulate(spec, _init(cfg), sim.epsilon, sim.horizon, sd)
        else:
            tr = simulate.gillespie_run(cfg.model.chain(), _init(cfg), sim.horizon, sd)
            rep.add("simulate.audit", {"traj": j, "seed": sd}, simulate.audit_events(tr, seed=sd), 0)
        simulate.write_events_ndjson(tr, out / f"events_{j:04d}.ndjson")
        rep.add("simulate.replay", {"traj": j, "seed": sd, "events": len(tr)}, 0.0 if tr.replay_matches() else 1.0, 0)
        trajs.append(tr)
    simulate.write_summary_csv(simulate.ensemble_stats(trajs, sim.burn_in), out / "summary.csv")
    return rep


def _stationary(cfg: RunConfig, out: Path) -> Report:
    rep = Report()
    if cfg.model.kind == "levy":
        raise UsageError("stationary solves need a discrete model")
    if cfg.model.closed:
        raise UsageError("stationary solves need an open chain")
    spec = cfg.model.chain()
    m_cap = cfg.truncation.m_cap
    gen = process.build_generator(spec, m_cap=m_cap, clip_policy="clip")
    mu = process.stationary_distribution(gen)
    leak = process.stationary_leak(gen, mu)
    rep.add("stationary.leak", {"m_cap": m_cap}, leak, cfg.truncation.tail_tol)
    states = gen.states.astype(float)
    mean = mu @ states
    var = mu @ states**2 - mean**2
    theory = _linear_profile(cfg)
    with open(out / "stationary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "mean", "var", "theory"])
        for i in range(spec.n_sites):
            w.writerow([i + 1, repr(float(mean[i])), repr(float(var[i])), "" if theory is None else repr(float(theory[i]))])
    if theory is not None:
        rep.add("stationary.profile", {"m_cap": m_cap}, float(np.abs(mean - theory).max()), 1e-6)
    return rep


def _ensemble(cfg: RunConfig):
    sim = cfg.sim
    if cfg.model.kind == "levy":
        spec = levy.LevySpec(cfg.model.N, cfg.model.lambda_left, cfg.model.lambda_right)
        return levy.run_levy_ensemble(spec, _init(cfg), sim.epsilon, sim.horizon, sim.n_traj, sim.seed, sim.burn_in)
    return simulate.run_ensemble(cfg.model.chain(), _init(cfg), sim.horizon, sim.n_traj, sim.seed, sim.burn_in)


def _profile(cfg: RunConfig, out: Path) -> Report:
    rep = Report()
    st = _ensemble(cfg)
    theory = _linear_profile(cfg)
    with open(out / "profile.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "mean", "var", "ci", "theory"])
        for row, i in zip(st.rows(), range(cfg.model.N)):
            th = "" if theory is None else repr(float(theory[i]))
            w.writerow([row["site"], repr(row["mean"]), repr(row["var"]), repr(row["ci"]), th])
    if theory is not None:
        for i in range(cfg.model.N):
            rep.add("profile.site", {"site": i + 1, "mean": st.mean[i], "theory": theory[i], "events": st.events},
                    abs(st.mean[i] - theory[i]), 3 * st.se[i])
    return rep


def _correlations(cfg: RunConfig, out: Path) -> Report:
    rep = Report()
    m = cfg.model
    if m.kind != "spin_half" or m.closed:
        raise UsageError("correlations need an open spin_half chain")
    rho_a, rho_b = (Fraction(str(b)) / (1 - Fraction(str(b))) for b in (m.beta_left, m.beta_right))
    st = _ensemble(cfg)
    with open(out / "correlations.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "predicted", "simulated", "se"])
        for i in range(1, m.N + 1):
            for j in range(i, m.N + 1):
                pred = float(duality.stationary_moment_predict((i, j), m.N, rho_a, rho_b))
                sim, se = float(st.pair[i - 1, j - 1]), float(st.pair_se[i - 1, j - 1])
                w.writerow([i, j, repr(pred), repr(sim), repr(se)])
                rep.add("correlations.pair", {"i": i, "j": j, "predicted": pred, "simulated": sim}, abs(pred - sim), 3 * se)
    return rep


def _verify(cfg: RunConfig, suite: str, seed, mcap) -> Report:
    rep = Report()
    names = suites.SUITES if suite == "all" else (suite,)
    for name in names:
        try:
            params = suites.suite_params(name, cfg.overrides(name))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), None, cfg.source) from exc
        rep.extend(suites.run_suite(name, params, seed=seed, m_cap=mcap))
    return rep


def run_command(command: str, cfg: RunConfig, out, suite: str | None = None, seed=None, mcap=None) -> Report:
    """Run one command, writing its artifacts under ``out``; returns the check report."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "simulate":
        return _simulate(cfg, out)
    if command == "stationary":
        return _stationary(cfg, out)
    if command == "profile":
        return _profile(cfg, out)
    if command == "correlations":
        return _correlations(cfg, out)
    if command == "verify":
        return _verify(cfg, suite or "all", seed, mcap)
    raise UsageError(f"unknown command {command!r}")


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = _apply_flags(parse_config(args.config), args.seed, args.mcap, args.tol)
    except (ConfigError, UsageError) as exc:
        print(f"madm: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_command(args.command, cfg, args.out, getattr(args, "suite", None), args.seed, args.mcap)
    except (ConfigError, UsageError) as exc:
        print(f"madm: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, MemoryError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"madm: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    path = Path(args.out) / "report.json"
    try:
        write_report(report, path)
    except OSError as exc:
        print(f"madm: cannot write report {path}: {exc}", file=sys.stderr)
        return 1
    s = report.summary()["summary"]
    print(f"{args.command}: {s['passed']}/{s['total']} checks passed; report at {path}")
    return 0 if report.all_passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
