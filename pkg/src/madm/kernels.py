"""Hot loops: Gillespie, Levy and dual-walker simulation, Gauss-Seidel sweeps.

Every kernel is plain Python over numpy arrays decorated with :func:`njit`, so
``MADM_DISABLE_NUMBA=1`` runs the identical algorithm (and RNG stream) in the
interpreter.  Randomness comes exclusively from ``np.random.random`` after an
explicit ``np.random.seed``; numba and numpy share the Mersenne Twister
algorithm, so both backends produce the same trajectories for the same seed.

Event kinds are small integers, see :data:`KIND_NAMES`.
"""

import math

import numpy as np

from ._jit import njit

BULK_RIGHT, BULK_LEFT, INJECT_LEFT, REMOVE_LEFT, INJECT_RIGHT, REMOVE_RIGHT = range(6)
KIND_NAMES = ("bulk_right", "bulk_left", "inject_left", "remove_left", "inject_right", "remove_right")

STATUS_HORIZON, STATUS_BUFFER_FULL, STATUS_ABSORBED = 0, 1, 2


# ---------------------------------------------------------------------------
# small samplers
# ---------------------------------------------------------------------------


@njit(cache=True)
def exp_wait(rate):
    return -math.log(1.0 - np.random.random()) / rate


@njit(cache=True)
def logseries_draw(p):
    """Draw k >= 1 with probability ``p^k / (k (-log(1-p)))`` (Kemp's algorithm)."""
    r = math.log1p(-p)
    while True:
        v = np.random.random()
        if v >= p:
            return 1
        u = np.random.random()
        q = -math.expm1(r * u)
        if v <= q * q:
            res = math.floor(1.0 + math.log(v) / math.log(q))
            if res < 1:
                continue
            return int(res)
        if v >= q:
            return 1
        return 2


@njit(cache=True)
def logseries_batch(p, n, seed):
    np.random.seed(seed)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = logseries_draw(p)
    return out


@njit(cache=True)
def grow_harmonic(table, m_needed, two_s):
    """Return a table with ``table[m] = sum_{k<=m} 1/(k + 2s - 1)`` for m <= m_needed."""
    n_old = table.shape[0]
    if m_needed < n_old:
        return table
    n_new = max(2 * n_old, m_needed + 1)
    out = np.empty(n_new)
    out[:n_old] = table
    for m in range(n_old, n_new):
        out[m] = out[m - 1] + 1.0 / (m + two_s - 1.0)
    return out


@njit(cache=True)
def jump_size(m, two_s, table):
    """Sample k in 1..m with probability ``rate(m, k) / h(m)``."""
    target = np.random.random() * table[m]
    if two_s == 1.0:
        # weights 1/k: the harmonic table is the CDF, bisect it
        lo, hi = 1, m
        while lo < hi:
            mid = (lo + hi) // 2
            if table[mid] >= target:
                hi = mid
            else:
                lo = mid + 1
        return lo
    w = 1.0
    acc = 0.0
    for k in range(1, m + 1):
        w *= (m - k + 1) / (m - k + two_s)
        acc += w / k
        if acc >= target:
            return k
    return m


# ---------------------------------------------------------------------------
# Fenwick tree over channel rates
# ---------------------------------------------------------------------------


@njit(cache=True)
def fenwick_set(tree, values, i, v):
    d = v - values[i]
    values[i] = v
    j = i + 1
    n = tree.shape[0]
    while j <= n:
        tree[j - 1] += d
        j += j & (-j)


@njit(cache=True)
def fenwick_find(tree, target):
    """Smallest index whose prefix sum exceeds ``target``."""
    n = tree.shape[0]
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt - 1] <= target:
            pos = nxt
            target -= tree[nxt - 1]
        step //= 2
    return min(pos, n - 1)


@njit(cache=True)
def fenwick_build(values):
    n = values.shape[0]
    tree = np.zeros(n)
    for i in range(n):
        j = i + 1
        while j <= n:
            tree[j - 1] += values[i]
            j += j & (-j)
    return tree


# ---------------------------------------------------------------------------
# time-integral accumulation
# ---------------------------------------------------------------------------


@njit(cache=True)
def accumulate(m, t_a, t_b, burn_in, batch_len, sum1, sum2):
    """Add ``m dt`` and ``m m^T dt`` over [t_a, t_b] into per-batch accumulators."""
    nbatch = sum1.shape[0]
    n = m.shape[0]
    lo = max(t_a, burn_in)
    end = burn_in + nbatch * batch_len
    hi = min(t_b, end)
    while lo < hi:
        b = int((lo - burn_in) / batch_len)
        # lo can sit on a batch edge that the division rounds down past
        while b < nbatch and burn_in + (b + 1) * batch_len <= lo:
            b += 1
        if b >= nbatch:
            break
        edge = min(hi, burn_in + (b + 1) * batch_len)
        dt = edge - lo
        if dt > 0.0:
            for i in range(n):
                xi = m[i] * dt
                sum1[b, i] += xi
                for j in range(n):
                    sum2[b, i, j] += xi * m[j]
        lo = edge


# ---------------------------------------------------------------------------
# discrete particle process
# ---------------------------------------------------------------------------


@njit(cache=True)
def _channel_rates(m, closed, table, rates, inj_l, inj_r):
    n = m.shape[0]
    nb = n - 1 if not closed else (n if n > 1 else 0)
    for b in range(nb):
        a = b
        c = b + 1 if b + 1 < n else 0
        rates[2 * b] = table[m[a]]
        rates[2 * b + 1] = table[m[c]]
    if not closed:
        base = 2 * nb
        rates[base + 0] = inj_l
        rates[base + 1] = table[m[0]]
        rates[base + 2] = inj_r
        rates[base + 3] = table[m[n - 1]]


@njit(cache=True, nogil=True)
def gillespie_kernel(
    m,
    two_s,
    beta_l,
    beta_r,
    closed,
    t,
    horizon,
    seed,
    rec_t,
    rec_site,
    rec_kind,
    rec_k,
    burn_in,
    batch_len,
    sum1,
    sum2,
):
    """Advance configuration ``m`` (in place) from time ``t`` to ``horizon``.

    ``seed >= 0`` reseeds the generator; pass -1 to continue the stream of a
    previous chunk.  Events are written into the ``rec_*`` buffers until they
    are full (status 1); time integrals go to ``sum1``/``sum2`` when
    ``sum1`` has at least one batch row.

    Returns ``(n_recorded, n_events, t, status)``.
    """
    if seed >= 0:
        np.random.seed(seed)
    n = m.shape[0]
    nb = n - 1 if not closed else (n if n > 1 else 0)
    n_ch = 2 * nb + (0 if closed else 4)
    if n_ch == 0:
        if sum1.shape[0] > 0:
            accumulate(m, t, horizon, burn_in, batch_len, sum1, sum2)
        return 0, 0, horizon, STATUS_ABSORBED
    inj_l = 0.0 if closed else -math.log1p(-beta_l)
    inj_r = 0.0 if closed else -math.log1p(-beta_r)
    total_m = 0
    for i in range(n):
        total_m += m[i]
    table = grow_harmonic(np.zeros(1), max(16, 2 * total_m), two_s)
    rates = np.zeros(n_ch)
    _channel_rates(m, closed, table, rates, inj_l, inj_r)
    tree = fenwick_build(rates)
    values = rates.copy()
    cap = rec_t.shape[0]
    stats = sum1.shape[0] > 0
    n_rec = 0
    n_ev = 0
    while True:
        if cap > 0 and n_rec >= cap:
            return n_rec, n_ev, t, STATUS_BUFFER_FULL
        total = 0.0
        for i in range(n_ch):
            total += values[i]
        if total <= 0.0:
            if stats:
                accumulate(m, t, horizon, burn_in, batch_len, sum1, sum2)
            return n_rec, n_ev, horizon, STATUS_ABSORBED
        t_next = t + exp_wait(total)
        if t_next >= horizon:
            if stats:
                accumulate(m, t, horizon, burn_in, batch_len, sum1, sum2)
            return n_rec, n_ev, horizon, STATUS_HORIZON
        if stats:
            accumulate(m, t, t_next, burn_in, batch_len, sum1, sum2)
        t = t_next
        ch = fenwick_find(tree, np.random.random() * total)
        while values[ch] <= 0.0:  # guard against round-off at zero-rate channels
            ch = fenwick_find(tree, np.random.random() * total)
        if ch < 2 * nb:
            b = ch // 2
            c = b + 1 if b + 1 < n else 0
            if ch % 2 == 0:
                src, dst, kind = b, c, BULK_RIGHT
            else:
                src, dst, kind = c, b, BULK_LEFT
            k = jump_size(m[src], two_s, table)
            m[src] -= k
            m[dst] += k
            site = src
        else:
            j = ch - 2 * nb
            if j == 0 or j == 2:
                site = 0 if j == 0 else n - 1
                k = logseries_draw(beta_l if j == 0 else beta_r)
                m[site] += k
                kind = INJECT_LEFT if j == 0 else INJECT_RIGHT
            else:
                site = 0 if j == 1 else n - 1
                k = jump_size(m[site], two_s, table)
                m[site] -= k
                kind = REMOVE_LEFT if j == 1 else REMOVE_RIGHT
        n_ev += 1
        if cap > 0:
            rec_t[n_rec] = t
            rec_site[n_rec] = site
            rec_kind[n_rec] = kind
            rec_k[n_rec] = k
            n_rec += 1
        mx = 0
        for i in range(n):
            if m[i] > mx:
                mx = m[i]
        table = grow_harmonic(table, mx, two_s)
        # refresh the channels touching the changed sites
        _channel_rates(m, closed, table, rates, inj_l, inj_r)
        for i in range(n_ch):
            if rates[i] != values[i]:
                fenwick_set(tree, values, i, rates[i])


# ---------------------------------------------------------------------------
# Levy process with small-jump cutoff
# ---------------------------------------------------------------------------


@njit(cache=True)
def levy_injection_size(lam, eps):
    """Sample alpha >= eps with density proportional to ``exp(-lam alpha) / alpha``."""
    x0 = 1.0 / lam
    if eps >= x0:
        while True:
            a = eps + exp_wait(lam)
            if np.random.random() <= eps / a:
                return a
    mass_a = math.log(x0 / eps)
    mass_b = math.exp(-1.0)
    p_a = mass_a / (mass_a + mass_b)
    while True:
        if np.random.random() < p_a:
            a = eps * (x0 / eps) ** np.random.random()
            if np.random.random() <= math.exp(-lam * a):
                return a
        else:
            a = x0 + exp_wait(lam)
            if np.random.random() <= 1.0 / (lam * a):
                return a


@njit(cache=True)
def _levy_rates(x, eps, rates, inj_l, inj_r):
    n = x.shape[0]
    nb = n - 1
    for b in range(nb):
        rates[2 * b] = math.log(x[b] / eps) if x[b] > eps else 0.0
        rates[2 * b + 1] = math.log(x[b + 1] / eps) if x[b + 1] > eps else 0.0
    base = 2 * nb
    rates[base + 0] = inj_l
    rates[base + 1] = math.log(x[0] / eps) if x[0] > eps else 0.0
    rates[base + 2] = inj_r
    rates[base + 3] = math.log(x[n - 1] / eps) if x[n - 1] > eps else 0.0


@njit(cache=True, nogil=True)
def levy_kernel(
    x,
    lam_l,
    lam_r,
    eps,
    inj_l,
    inj_r,
    t,
    horizon,
    seed,
    rec_t,
    rec_site,
    rec_kind,
    rec_alpha,
    burn_in,
    batch_len,
    sum1,
    sum2,
):
    """Compound-Poisson Levy dynamics; same buffer and status conventions as the Gillespie kernel.

    ``inj_l``/``inj_r`` are the injection intensities ``E1(lam eps)``, passed
    in because the exponential integral is evaluated outside the kernel.
    """
    if seed >= 0:
        np.random.seed(seed)
    n = x.shape[0]
    nb = n - 1
    n_ch = 2 * nb + 4
    rates = np.zeros(n_ch)
    _levy_rates(x, eps, rates, inj_l, inj_r)
    values = rates.copy()
    tree = fenwick_build(rates)
    cap = rec_t.shape[0]
    stats = sum1.shape[0] > 0
    n_rec = 0
    n_ev = 0
    while True:
        if cap > 0 and n_rec >= cap:
            return n_rec, n_ev, t, STATUS_BUFFER_FULL
        total = 0.0
        for i in range(n_ch):
            total += values[i]
        t_next = t + exp_wait(total)
        if t_next >= horizon:
            if stats:
                accumulate(x, t, horizon, burn_in, batch_len, sum1, sum2)
            return n_rec, n_ev, horizon, STATUS_HORIZON
        if stats:
            accumulate(x, t, t_next, burn_in, batch_len, sum1, sum2)
        t = t_next
        ch = fenwick_find(tree, np.random.random() * total)
        while values[ch] <= 0.0:
            ch = fenwick_find(tree, np.random.random() * total)
        if ch < 2 * nb:
            b = ch // 2
            if ch % 2 == 0:
                src, dst, kind = b, b + 1, BULK_RIGHT
            else:
                src, dst, kind = b + 1, b, BULK_LEFT
            a = eps * (x[src] / eps) ** np.random.random()
            a = min(a, x[src])
            x[src] -= a
            x[dst] += a
            site = src
        else:
            j = ch - 2 * nb
            if j == 0 or j == 2:
                site = 0 if j == 0 else n - 1
                a = levy_injection_size(lam_l if j == 0 else lam_r, eps)
                x[site] += a
                kind = INJECT_LEFT if j == 0 else INJECT_RIGHT
            else:
                site = 0 if j == 1 else n - 1
                a = eps * (x[site] / eps) ** np.random.random()
                a = min(a, x[site])
                x[site] -= a
                kind = REMOVE_LEFT if j == 1 else REMOVE_RIGHT
        n_ev += 1
        if cap > 0:
            rec_t[n_rec] = t
            rec_site[n_rec] = site
            rec_kind[n_rec] = kind
            rec_alpha[n_rec] = a
            n_rec += 1
        _levy_rates(x, eps, rates, inj_l, inj_r)
        for i in range(n_ch):
            if rates[i] != values[i]:
                fenwick_set(tree, values, i, rates[i])


# ---------------------------------------------------------------------------
# dual absorbing walkers
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def dual_absorption_kernel(start, n_runs, seed):
    """Run the absorbing dual process ``n_runs`` times from ``start`` (length N+2).

    Returns counts ``c[a]`` of runs ending with a walkers in slot 0 (and the
    rest in slot N+1).
    """
    np.random.seed(seed)
    n_tot = start.shape[0]
    n = n_tot - 2
    total = 0
    for i in range(1, n + 1):
        total += start[i]
    total += start[0] + start[n_tot - 1]
    table = grow_harmonic(np.zeros(1), total + 1, 1.0)
    counts = np.zeros(total + 1, dtype=np.int64)
    ell = np.empty(n_tot, dtype=np.int64)
    rates = np.zeros(2 * (n + 1))
    for _ in range(n_runs):
        for i in range(n_tot):
            ell[i] = start[i]
        while True:
            bulk = 0
            for i in range(1, n + 1):
                bulk += ell[i]
            if bulk == 0:
                break
            # bond (i, i+1) for i = 0..N: moves out of bulk sites only
            tot = 0.0
            for b in range(n + 1):
                left = ell[b] if b >= 1 else 0
                right = ell[b + 1] if b + 1 <= n else 0
                rates[2 * b] = table[left]
                rates[2 * b + 1] = table[right]
                tot += table[left] + table[right]
            u = np.random.random() * tot
            ch = 0
            acc = rates[0]
            while acc <= u and ch < rates.shape[0] - 1:
                ch += 1
                acc += rates[ch]
            b = ch // 2
            if ch % 2 == 0:
                src, dst = b, b + 1
            else:
                src, dst = b + 1, b
            k = jump_size(ell[src], 1.0, table)
            ell[src] -= k
            ell[dst] += k
        counts[ell[0]] += 1
    return counts


# ---------------------------------------------------------------------------
# stationary solve
# ---------------------------------------------------------------------------


@njit(cache=True)
def gauss_seidel_sweeps(indptr, indices, data, mu, sweeps):
    """Gauss-Seidel sweeps for ``H mu = 0`` on a CSR matrix, renormalising after each sweep."""
    n = mu.shape[0]
    for _ in range(sweeps):
        for j in range(n):
            d = 0.0
            acc = 0.0
            for p in range(indptr[j], indptr[j + 1]):
                i = indices[p]
                if i == j:
                    d = data[p]
                else:
                    acc += data[p] * mu[i]
            if d > 0.0:
                mu[j] = -acc / d
        s = 0.0
        for j in range(n):
            s += mu[j]
        for j in range(n):
            mu[j] /= s
    return mu
