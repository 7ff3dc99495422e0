"""Verification suites run by ``madm verify``.

Each suite takes a parameter mapping (defaults below, overridable per suite
from the config's ``checks`` list) and returns a :class:`~madm.report.Report`.
Exact checks carry bound 0; float checks carry the tolerance they are held to.
"""

from __future__ import annotations

import math
from fractions import Fraction

from . import duality, levy, process, qism
from .process import ChainSpec
from .report import Report

__all__ = ["DEFAULTS", "SUITES", "run_suite", "suite_params"]


def _q(v) -> Fraction:
    """Rational from a config value; floats go through their decimal repr (0.4 -> 2/5)."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(str(v))


DEFAULTS = {
    "ybe": {"spins": ["1/2", "1", "2"], "m_cap": 8, "samples": 5, "seed": 0, "fundamental_spins": ["1/2", "1"], "n_max": 6},
    "bybe": {
        "beta_left": "3/10", "beta_right": "2/5", "x": "21/100", "y": "-37/100", "s": "1/2",
        "caps": [16, 24, 32], "window": 6, "gauge_beta": "3/10", "gauge_beta_p": "3/5",
    },
    "transfer": {"N": 2, "beta_left": "2/5", "beta_right": "1/2", "m_cap": 10, "samples": 5, "seed": 0, "bound": 1e-9},
    "hamiltonian": {
        "N": 2, "beta_left": 0.4, "beta_right": 0.5, "m_cap": 12, "bound": 1e-8,
        "conjugation_spins": ["1/2", "1"], "conjugation_beta_right": 0.25,
        "sum_betas": [0.3, 0.7, 0.9], "max_gap": 10, "sums_bound": 1e-10,
    },
    "duality": {
        "N": 2, "beta_left": 0.4, "beta_right": 0.6, "m_cap": 12, "bound": 1e-10,
        "edge_max": 8, "self_s": "1", "self_N": 3, "self_n_max": 3, "boundary_max": 8,
    },
    "reversibility": {
        "beta": "2/5", "n_max_open": 3, "m_cap": 12, "nb_s": "1", "nb_beta": "1/2", "nb_N": 4, "nb_n_max": 6, "bound": 1e-12,
    },
    "limits": {
        "M": 5, "q_eps": 1e-6, "madm_bound": 1e-4, "eps_gamma": 1e-4, "eps_s": 1e-5, "qhahn_bound": 1e-3,
        "spins": [0.5, 1.0], "n_max": 4, "sum_bound": 1e-12,
    },
    "levy": {
        "max_degree": 8, "duality_degree": 4, "scaling_M": [250, 500, 1000], "halving_tol": 0.2,
        "N": 2, "lam": 1.0, "eps": 1e-6, "horizon": 2000.0, "n_traj": 4, "burn_in": 100.0,
    },
}

SUITES = tuple(DEFAULTS)


def suite_params(name: str, overrides: dict | None = None) -> dict:
    if name not in DEFAULTS:
        raise KeyError(f"unknown suite {name!r}")
    out = dict(DEFAULTS[name])
    for k, v in (overrides or {}).items():
        if k not in out:
            raise KeyError(f"suite {name!r} has no parameter {k!r}")
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def _ybe(p, seed):
    rep = Report()
    pts = qism.sample_points(p["samples"], p["seed"] if seed is None else seed)
    for s in map(_q, p["spins"]):
        for x, y in pts:
            r = qism.ybe_residual(x, y, s, p["m_cap"], exact=True)
            rep.add("ybe.lax", {"s": s, "x": x, "y": y, "m_cap": p["m_cap"]}, r, 0)
        for x, _ in pts:
            r = qism.unitarity_residual(x, s, p["m_cap"], exact=True)
            rep.add("ybe.unitarity", {"s": s, "x": x, "m_cap": p["m_cap"]}, r, 0)
    x, y = pts[0]
    for s in map(_q, p["fundamental_spins"]):
        r = qism.fundamental_ybe_residual(x, y, s, p["n_max"], exact=True)
        rep.add("ybe.fundamental", {"s": s, "x": x, "y": y, "n_max": p["n_max"]}, r, 0)
    return rep


def _bybe(p, seed):
    rep = Report()
    x, y, s = _q(p["x"]), _q(p["y"]), _q(p["s"])
    b1, bn = _q(p["beta_left"]), _q(p["beta_right"])
    bound = float(max(b1, bn))
    # the right K-operator carries beta_N, the left one beta_1
    for side, beta in (("hat", bn), ("unhat", b1)):
        params = qism.stochastic_params(beta, True)
        res = [float(qism.bybe_residual(side, x, y, params, s, cap, p["window"], exact=True)) for cap in p["caps"]]
        ratios = [b / a if a > 0 else 0.0 for a, b in zip(res, res[1:])]
        info = {"side": side, "beta": beta, "x": x, "y": y, "caps": p["caps"], "residuals": res}
        rep.add("bybe.decay_ratio", info, max(ratios, default=0.0), bound)
        diag = qism.bybe_residual(side, x, y, (Fraction(0), Fraction(0), Fraction(1), Fraction(1, 3)), s, p["caps"][0], p["window"], exact=True)
        rep.add("bybe.diagonal", {"side": side, "x": x, "y": y, "delta": "1/3"}, diag, 0)
    r = qism.inversion_residual(x, (Fraction(0), Fraction(0), Fraction(1), Fraction(0)), s, p["caps"][0], p["window"], pad=0)
    rep.add("bybe.inversion_triangular", {"x": x, "beta": 0}, r, 0)
    gauge = qism.triangularize_checks(_q(p["gauge_beta"]), _q(p["gauge_beta_p"]))
    for key, val in gauge.items():
        rep.add(f"bybe.gauge.{key}", {"beta": p["gauge_beta"], "beta_p": p["gauge_beta_p"]}, val, 0)
    return rep


def _transfer(p, seed):
    rep = Report()
    spec = ChainSpec(p["N"], Fraction(1, 2), _q(p["beta_left"]), _q(p["beta_right"]))
    pts = qism.sample_points(p["samples"], p["seed"] if seed is None else seed)
    cr = qism.commutator_residuals(spec, p["m_cap"], points=pts, exact=True)
    for (x, y), tt, ht in zip(cr.points, cr.tt, cr.ht):
        base = {"N": p["N"], "m_cap": p["m_cap"], "x": x, "y": y}
        rep.add("transfer.tt", base, float(tt), p["bound"])
        rep.add("transfer.ht", base, float(ht), p["bound"])
    return rep


def _hamiltonian(p, seed):
    rep = Report()
    spec = ChainSpec(p["N"], 0.5, float(p["beta_left"]), float(p["beta_right"]))
    for right in ("closed", "sums"):
        r = qism.hamiltonian_residual(spec, p["m_cap"], right)
        rep.add("hamiltonian.extraction", {"N": p["N"], "m_cap": p["m_cap"], "right": right, "beta_left": p["beta_left"], "beta_right": p["beta_right"]}, r, p["bound"])
    for s in map(_q, p["conjugation_spins"]):
        sp = ChainSpec(p["N"], s, float(p["beta_left"]), float(p["conjugation_beta_right"]))
        r = qism.hamiltonian_residual(sp, p["m_cap"], "conjugation")
        rep.add("hamiltonian.extraction", {"N": p["N"], "s": s, "m_cap": p["m_cap"], "right": "conjugation", "beta_right": p["conjugation_beta_right"]}, r, p["bound"])
    for row in qism.middle_sum_residuals(p["sum_betas"], p["max_gap"]):
        params = {"beta": row["beta"], "k": row["k"], "l": row["l"]}
        rep.add("hamiltonian.sum1", params, row["coef1"], p["sums_bound"])
        rep.add("hamiltonian.sum2", params, row["coef2"], p["sums_bound"])
    return rep


def _duality(p, seed):
    rep = Report()
    spec = ChainSpec(p["N"], Fraction(1, 2), float(p["beta_left"]), float(p["beta_right"]))
    r = duality.matrix_duality_residual(spec, p["m_cap"])
    rep.add("duality.matrix", {"N": p["N"], "m_cap": p["m_cap"], "beta_left": p["beta_left"], "beta_right": p["beta_right"]}, r, p["bound"])
    e = p["edge_max"]
    worst = max(abs(duality.edge_identity_residual(a, b, c, d)) for a in range(e + 1) for b in range(e + 1) for c in range(e + 1) for d in range(e + 1))
    rep.add("duality.edge", {"max_argument": e}, worst, 0)
    for beta in (float(p["beta_left"]), float(p["beta_right"])):
        worst, tail = 0.0, 0.0
        for m in range(p["boundary_max"] + 1):
            for l in range(p["boundary_max"] + 1):
                d, t = duality.boundary_identity_residual(m, l, beta)
                worst, tail = max(worst, d), max(tail, t)
        rep.add("duality.boundary", {"beta": beta, "max_argument": p["boundary_max"], "tail_bound": tail}, worst, p["bound"])
        r = duality.boundary_intertwiner_residual(_q(beta), p["m_cap"], exact=True)
        rep.add("duality.intertwiner", {"beta": beta, "m_cap": p["m_cap"]}, r, 0)
    s = _q(p["self_s"])
    for n in range(p["self_n_max"] + 1):
        for nd in range(p["self_n_max"] + 1):
            r = duality.self_duality_residual(s, p["self_N"], n, nd)
            rep.add("duality.self", {"s": s, "N": p["self_N"], "n": n, "n_dual": nd}, r, 0)
    for start in ((0, 1, 0, 0), (0, 1, 1, 0), (0, 2, 0, 0)):
        tab = duality.absorption(start)
        rep.add("duality.absorption_total", {"start": start}, abs(tab.total() - 1), 0)
    return rep


def _reversibility(p, seed):
    rep = Report()
    beta = _q(p["beta"])
    for n in range(1, p["n_max_open"] + 1):
        spec = ChainSpec(n, Fraction(1, 2), beta, beta)
        g = process.build_generator(spec, m_cap=p["m_cap"], clip_policy="restrict", exact=True)
        r = process.detailed_balance_residual(g, lambda m: process.geometric_weight(beta, m, exact=True))
        rep.add("reversibility.geometric", {"N": n, "beta": beta, "m_cap": p["m_cap"], "mode": "rational"}, r, 0)
        fspec = ChainSpec(n, 0.5, float(beta), float(beta))
        g = process.build_generator(fspec, m_cap=p["m_cap"], clip_policy="restrict")
        r = process.detailed_balance_residual(g, lambda m: process.geometric_weight(float(beta), m, exact=False))
        rep.add("reversibility.geometric", {"N": n, "beta": float(beta), "m_cap": p["m_cap"], "mode": "float"}, r, p["bound"])
    s, nb = _q(p["nb_s"]), _q(p["nb_beta"])
    for n in range(p["nb_n_max"] + 1):
        spec = ChainSpec(p["nb_N"], s, closed=True)
        g = process.build_generator(spec, sector=n, exact=True)
        r = process.detailed_balance_residual(g, lambda m: process.negative_binomial_weight(s, nb, m, exact=True))
        rep.add("reversibility.negative_binomial", {"N": p["nb_N"], "s": s, "n": n, "mode": "rational"}, r, 0)
        fspec = ChainSpec(p["nb_N"], float(s), closed=True)
        g = process.build_generator(fspec, sector=n)
        r = process.detailed_balance_residual(g, lambda m: process.negative_binomial_weight(float(s), float(nb), m, exact=False))
        rep.add("reversibility.negative_binomial", {"N": p["nb_N"], "s": float(s), "n": n, "mode": "float"}, r, p["bound"])
    return rep


def _limits(p, seed):
    rep = Report()
    r = process.madm_limit_residual(p["M"], p["q_eps"])
    rep.add("limits.madm", {"M": p["M"], "q": 1 + p["q_eps"]}, r, p["madm_bound"])
    gamma = 1 - p["eps_gamma"]
    for s in p["spins"]:
        for n in range(1, p["n_max"] + 1):
            for m in range(1, n + 1):
                r = process.qhahn_limit_residual(s, m, n, p["eps_gamma"], p["eps_s"])
                rep.add("limits.qhahn", {"s": s, "n": n, "m": m, "eps_gamma": p["eps_gamma"], "eps_s": p["eps_s"]}, r, p["qhahn_bound"])
            w = math.fsum(process.qhahn_limit_weight(s, s - p["eps_s"], gamma, m, n) for m in range(n + 1))
            rep.add("limits.qhahn_sum", {"s": s, "n": n, "gamma": gamma}, abs(w - 1), p["sum_bound"])
    for mu, nu, g in ((0.3, 0.6, 0.5), (0.7, 0.2, 0.9)):
        for n in range(p["n_max"] + 1):
            w = math.fsum(process.qhahn_rate(mu, nu, g, m, n) for m in range(n + 1))
            rep.add("limits.qhahn_sum", {"mu": mu, "nu": nu, "gamma": g, "n": n}, abs(w - 1), p["sum_bound"])
    return rep


def _levy(p, seed):
    rep = Report()
    worst = Fraction(0)
    for a in range(p["max_degree"] + 1):
        for b in range(p["max_degree"] + 1 - a):
            worst = max(worst, levy.f1_f2_relation_residual(a, b))
    rep.add("levy.f1_f2", {"max_degree": p["max_degree"]}, worst, 0)
    try:
        sign, res = duality.levy_duality_certify(p["duality_degree"])
        rep.add("levy.duality", {"max_degree": p["duality_degree"], "sign": sign, "other": float(res[-sign])}, res[sign], 0)
    except RuntimeError:
        rep.add("levy.duality", {"max_degree": p["duality_degree"], "sign": None}, math.inf, 0)
    ms = list(p["scaling_M"])
    for side in ("bulk", "boundary"):
        res = [levy.scaling_limit_residual(M, side=side) for M in ms]
        dev = max(abs(a / b / 2 - 1) for a, b in zip(res, res[1:]))
        rep.add("levy.scaling_halving", {"side": side, "M": ms, "residuals": res}, dev, p["halving_tol"])
    spec = levy.LevySpec(p["N"], p["lam"], p["lam"])
    init = [1.0 / p["lam"]] * p["N"]
    st = levy.run_levy_ensemble(spec, init, p["eps"], p["horizon"], p["n_traj"], 0 if seed is None else seed, p["burn_in"])
    dev = max(abs(st.mean - 1.0 / p["lam"]) - 3 * st.se)
    rep.add("levy.equilibrium_mean", {"N": p["N"], "lam": p["lam"], "eps": p["eps"], "mean": st.mean.tolist(), "se": st.se.tolist()}, dev, p["eps"])
    return rep


_RUNNERS = {
    "ybe": _ybe,
    "bybe": _bybe,
    "transfer": _transfer,
    "hamiltonian": _hamiltonian,
    "duality": _duality,
    "reversibility": _reversibility,
    "limits": _limits,
    "levy": _levy,
}


def run_suite(name: str, overrides: dict | None = None, seed: int | None = None, m_cap: int | None = None) -> Report:
    """Run one suite; ``m_cap`` replaces the suite's ``m_cap`` parameter if it has one."""
    p = suite_params(name, overrides)
    if m_cap is not None and "m_cap" in p:
        p["m_cap"] = m_cap
    return _RUNNERS[name](p, seed)
