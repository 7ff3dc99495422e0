"""Exact Gillespie simulation of the particle process and ensemble statistics.

No state-space truncation is involved: injection batches are drawn from the
full log-series law and jump sizes from the exact rate tables.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from ._jit import NUMBA_ENABLED
from .process import ChainSpec, jump_rate

__all__ = [
    "Trajectory",
    "StatSummary",
    "sample_logseries",
    "logseries_pmf",
    "trajectory_seeds",
    "gillespie_run",
    "ensemble_stats",
    "audit_events",
    "run_ensemble",
    "max_threads",
    "write_events_ndjson",
    "write_summary_csv",
]

CHUNK = 1 << 16


def max_threads() -> int:
    """Worker count: ``MADM_THREADS`` if set, else the CPU count; 1 without numba."""
    if not NUMBA_ENABLED:
        return 1
    env = os.environ.get("MADM_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, n)


def n_workers(threads: int | None, n_traj: int) -> int:
    """Thread count for an ensemble; the pure-Python kernels share numpy's global RNG, so they run serially."""
    if not NUMBA_ENABLED:
        return 1
    return max(1, min(threads or max_threads(), n_traj))


def trajectory_seeds(master_seed: int, n: int) -> list[int]:
    """Independent 32-bit seeds for trajectories 0..n-1, derived from ``master_seed`` only."""
    children = np.random.SeedSequence(int(master_seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def logseries_pmf(beta: float, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return beta**k / (k * -math.log1p(-beta))


def sample_logseries(beta: float, rng: np.random.Generator | int | None = None, size: int | None = None):
    """Log-series batch sizes, ``P(k) = beta^k / (k (-log(1 - beta)))``.

    ``rng`` is a numpy Generator (or seed) used only to pick the kernel seed.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta out of (0,1): {beta}")
    rng = np.random.default_rng(rng)
    seed = int(rng.integers(0, 2**32))
    out = kernels.logseries_batch(float(beta), 1 if size is None else int(size), seed)
    return int(out[0]) if size is None else out


@dataclass
class Trajectory:
    """Event stream of one run: arrays ``t``, ``site``, ``kind``, ``k`` (or ``alpha``)."""

    spec: object
    initial: np.ndarray
    final: np.ndarray
    horizon: float
    t: np.ndarray
    site: np.ndarray
    kind: np.ndarray
    size: np.ndarray
    size_name: str = "k"
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.t)

    def deltas(self) -> np.ndarray:
        """Per-event change of the configuration, shape (events, N)."""
        n = len(self.initial)
        closed = getattr(self.spec, "closed", False)
        d = np.zeros((len(self.t), n), dtype=self.size.dtype)
        rows = np.arange(len(self.t))
        src = self.site
        right = np.where(src + 1 < n, src + 1, 0 if closed else n - 1)
        left = np.where(src - 1 >= 0, src - 1, n - 1 if closed else 0)
        k = self.size
        kd = self.kind
        for code, sign_src, dst in (
            (kernels.BULK_RIGHT, -1, right),
            (kernels.BULK_LEFT, -1, left),
            (kernels.INJECT_LEFT, 1, None),
            (kernels.INJECT_RIGHT, 1, None),
            (kernels.REMOVE_LEFT, -1, None),
            (kernels.REMOVE_RIGHT, -1, None),
        ):
            sel = kd == code
            d[rows[sel], src[sel]] += sign_src * k[sel]
            if dst is not None:
                d[rows[sel], dst[sel]] += k[sel]
        return d

    def path(self) -> np.ndarray:
        """Configurations after each event, with the initial one prepended."""
        return np.vstack([self.initial[None, :], self.initial[None, :] + np.cumsum(self.deltas(), axis=0)])

    def replay_matches(self, atol: float = 1e-9) -> bool:
        path = self.path()
        return bool(np.allclose(path[-1], self.final, atol=atol, rtol=0) and (path >= -atol).all())

    def records(self):
        names = kernels.KIND_NAMES
        cast = int if self.size_name == "k" else float
        for t, s, kd, k in zip(self.t.tolist(), self.site.tolist(), self.kind.tolist(), self.size.tolist()):
            yield {"t": t, "site": s, "kind": names[kd], self.size_name: cast(k)}


def write_events_ndjson(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in traj.records():
            fh.write(json.dumps(rec) + "\n")


def _check_init(spec: ChainSpec, init) -> np.ndarray:
    m = np.array(init, dtype=np.int64)
    if m.shape != (spec.n_sites,):
        raise ValueError(f"initial configuration must have {spec.n_sites} entries")
    if (m < 0).any():
        raise ValueError("occupations must be non-negative")
    return m


def _kernel_args(spec: ChainSpec):
    closed = bool(spec.closed)
    bl = 0.0 if closed else float(spec.beta_left)
    br = 0.0 if closed else float(spec.beta_right)
    return float(2 * spec.s), bl, br, closed


def gillespie_run(spec: ChainSpec, init, horizon: float, seed: int) -> Trajectory:
    """Simulate exactly on [0, horizon] and return the full event stream."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    m = _check_init(spec, init)
    initial = m.copy()
    two_s, bl, br, closed = _kernel_args(spec)
    empty1 = np.zeros((0, spec.n_sites))
    empty2 = np.zeros((0, spec.n_sites, spec.n_sites))
    chunks = []
    t = 0.0
    kseed = int(seed) % (2**32)
    while True:
        bt = np.empty(CHUNK)
        bs = np.empty(CHUNK, dtype=np.int64)
        bk = np.empty(CHUNK, dtype=np.int64)
        bz = np.empty(CHUNK, dtype=np.int64)
        n_rec, _, t, status = kernels.gillespie_kernel(
            m, two_s, bl, br, closed, t, float(horizon), kseed, bt, bs, bk, bz, 0.0, 1.0, empty1, empty2
        )
        kseed = -1
        chunks.append((bt[:n_rec], bs[:n_rec], bk[:n_rec], bz[:n_rec]))
        if status != kernels.STATUS_BUFFER_FULL:
            break
    cat = [np.concatenate([c[i] for c in chunks]) for i in range(4)]
    return Trajectory(spec, initial, m, float(horizon), cat[0], cat[1], cat[2], cat[3], "k", int(seed))


@dataclass
class StatSummary:
    """Time-averaged statistics with batch-means confidence intervals."""

    mean: np.ndarray
    var: np.ndarray
    pair: np.ndarray
    se: np.ndarray
    pair_se: np.ndarray
    events: int
    samples: int
    z: float = 1.96
    extra: dict = field(default_factory=dict)

    @property
    def ci(self) -> np.ndarray:
        return self.z * self.se

    def rows(self):
        for i in range(len(self.mean)):
            yield {"site": i + 1, "mean": float(self.mean[i]), "var": float(self.var[i]), "ci": float(self.ci[i])}


def write_summary_csv(summary: StatSummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["site", "mean", "var", "ci"])
        w.writeheader()
        for row in summary.rows():
            w.writerow(row)


def _summarise(batch1: np.ndarray, batch2: np.ndarray, batch_len: float, events: int) -> StatSummary:
    """Pool per-batch integrals (shape (B, N), (B, N, N)) into a summary."""
    if batch1.shape[0] == 0:
        raise ValueError("empty post-burn-in window")
    m1 = batch1 / batch_len
    m2 = batch2 / batch_len
    b = m1.shape[0]
    mean = np.array([math.fsum(col) for col in m1.T]) / b
    pair = np.array([[math.fsum(m2[:, i, j]) for j in range(m2.shape[2])] for i in range(m2.shape[1])]) / b
    var = np.maximum(np.diag(pair) - mean**2, 0.0)
    if b > 1:
        se = m1.std(axis=0, ddof=1) / math.sqrt(b)
        pair_se = m2.std(axis=0, ddof=1) / math.sqrt(b)
    else:
        se = np.full_like(mean, np.nan)
        pair_se = np.full_like(pair, np.nan)
    return StatSummary(mean, var, pair, se, pair_se, int(events), int(b))


def _batch_integrals(traj: Trajectory, burn_in: float, n_batches: int):
    """Exact per-batch time integrals of m and m m^T over [burn_in, horizon]."""
    path = traj.path().astype(float)
    times = np.concatenate([[0.0], traj.t])
    batch_len = (traj.horizon - burn_in) / n_batches
    edges = burn_in + batch_len * np.arange(n_batches + 1)
    edges[-1] = traj.horizon
    grid = np.union1d(times[times > burn_in], edges)
    grid = grid[(grid >= burn_in) & (grid <= traj.horizon)]
    left, right = grid[:-1], grid[1:]
    dt = right - left
    state = path[np.searchsorted(times, left, side="right") - 1]
    which = np.minimum(np.searchsorted(edges, left, side="right") - 1, n_batches - 1)
    n = path.shape[1]
    s1 = np.zeros((n_batches, n))
    s2 = np.zeros((n_batches, n, n))
    np.add.at(s1, which, state * dt[:, None])
    np.add.at(s2, which, state[:, :, None] * state[:, None, :] * dt[:, None, None])
    return s1, s2, batch_len


def ensemble_stats(trajectories: Sequence[Trajectory], burn_in: float, n_batches: int = 20) -> StatSummary:
    """Time-weighted averages over [burn_in, horizon], pooled over trajectories."""
    if not trajectories:
        raise ValueError("no trajectories")
    b1, b2, lens, events = [], [], set(), 0
    for tr in trajectories:
        if not burn_in < tr.horizon:
            raise ValueError("empty post-burn-in window")
        s1, s2, bl = _batch_integrals(tr, burn_in, n_batches)
        b1.append(s1)
        b2.append(s2)
        lens.add(round(bl, 12))
        events += len(tr)
    if len(lens) != 1:
        raise ValueError("trajectories must share horizon for pooled batch means")
    return _summarise(np.concatenate(b1), np.concatenate(b2), lens.pop(), events)


def _stats_one(spec: ChainSpec, init, horizon: float, burn_in: float, n_batches: int, seed: int):
    m = _check_init(spec, init)
    two_s, bl, br, closed = _kernel_args(spec)
    n = spec.n_sites
    s1 = np.zeros((n_batches, n))
    s2 = np.zeros((n_batches, n, n))
    empty_f = np.empty(0)
    empty_i = np.empty(0, dtype=np.int64)
    batch_len = (horizon - burn_in) / n_batches
    _, n_ev, _, _ = kernels.gillespie_kernel(
        m, two_s, bl, br, closed, 0.0, float(horizon), int(seed), empty_f, empty_i, empty_i, empty_i,
        float(burn_in), batch_len, s1, s2,
    )
    return s1, s2, n_ev


def run_ensemble(
    spec: ChainSpec,
    init,
    horizon: float,
    n_traj: int,
    seed: int,
    burn_in: float = 0.0,
    n_batches: int = 20,
    threads: int | None = None,
) -> StatSummary:
    """Statistics of ``n_traj`` independent runs without storing events.

    Trajectory j always uses seed ``trajectory_seeds(seed, n_traj)[j]``, and the
    reduction is done in trajectory order, so the result does not depend on
    thread scheduling.
    """
    if not 0 <= burn_in < horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    seeds = trajectory_seeds(seed, n_traj)
    workers = n_workers(threads, n_traj)
    job = lambda sd: _stats_one(spec, init, horizon, burn_in, n_batches, sd)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(sd) for sd in seeds]
    s1 = np.concatenate([r[0] for r in results])
    s2 = np.concatenate([r[1] for r in results])
    events = sum(r[2] for r in results)
    return _summarise(s1, s2, (horizon - burn_in) / n_batches, events)


def audit_events(traj: Trajectory, n_audit: int = 10_000, seed: int = 0) -> int:
    """Recheck randomly chosen events against the rate table at the pre-event state.

    Returns the number of violations (chosen channel with zero rate, or jump
    size out of bounds).
    """
    if len(traj) == 0:
        return 0
    path = traj.path()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(traj), size=min(n_audit, len(traj)), replace=False)
    bad = 0
    for e in picks:
        pre = path[e]
        kd, site, k = int(traj.kind[e]), int(traj.site[e]), int(traj.size[e])
        if kd in (kernels.INJECT_LEFT, kernels.INJECT_RIGHT):
            bad += k < 1
            continue
        avail = int(pre[site])
        if not 1 <= k <= avail or jump_rate(float(traj.spec.s), avail, k, exact=False) <= 0:
            bad += 1
    return bad
