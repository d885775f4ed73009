"""Hot loops of the association solvers.

All functions take flat numpy arrays so they can be compiled by numba. The
problem is described by

* ``p, d, Y, q``: participation probability, data size, label counts and the
  reference distribution;
* ``T, E, reach``: pair delay/energy (``COST_SENTINEL`` if unusable) and reachability;
* ``cap, tb, eb``: edge capacity and backhaul delay/energy;
* ``params`` / ``modes``: scalar settings, laid out by the ``P_*`` / ``M_*`` indices.
"""

import math

import numpy as np

from ._accel import njit
from .cost import COST_SENTINEL

P_ROUNDS, P_LT, P_LE, P_LC, P_KLD_THR, P_DELTA, P_DATA_THR, P_EPS, P_KLD_EMPTY = range(9)
N_PARAMS = 9
M_OBJ, M_KLD, M_DATA = range(3)

OBJ_COST, OBJ_KLD = 0, 1
KLD_NONE, KLD_DET, KLD_MARKOV, KLD_EXACT = 0, 1, 2, 3
DATA_NONE, DATA_DET, DATA_MARKOV, DATA_EXACT = 0, 1, 2, 3

MAX_EXACT = 20


@njit
def kld_counts(counts, total, q, empty_value):
    if total <= 0:
        return empty_value
    s = 0.0
    for h in range(q.shape[0]):
        c = counts[h]
        if c > 0:
            r = c / total
            s += r * math.log(r / q[h])
    return s


@njit
def _u(r, qh):
    if r <= 0:
        return 0.0
    return r * math.log(r / qh)


@njit
def g_sum(members, k, Y, d, q):
    """Sum over labels of the piecewise bound G for the given member clients."""
    total = 0.0
    for h in range(q.shape[0]):
        lo = np.inf
        hi = -np.inf
        for a in range(k):
            i = members[a]
            r = Y[i, h] / d[i]
            if r < lo:
                lo = r
            if r > hi:
                hi = r
        stat = q[h] / math.e
        if stat >= hi:
            g = _u(lo, q[h])
        elif stat <= lo:
            g = _u(hi, q[h])
        else:
            g = max(_u(lo, q[h]), _u(hi, q[h]))
        total += g
    return total


@njit
def markov_bound(members, k, p, Y, d, q, limit):
    if k == 0:
        return 1.0
    off = 1.0
    for a in range(k):
        off *= 1.0 - p[members[a]]
    return off + (1.0 - off) * g_sum(members, k, Y, d, q) / limit


@njit
def exact_probs(members, k, p, Y, d, q, kld_thr, data_thr, kld_empty):
    """Exact (Pr[KLD > kld_thr or empty], Pr[D < data_thr]) over all 2^k patterns."""
    z = q.shape[0]
    counts = np.zeros(z)
    total = 0.0
    # always-online clients are folded into the base, never-online ones dropped
    free = np.empty(k, np.int64)
    m = 0
    for a in range(k):
        i = members[a]
        if p[i] >= 1.0:
            total += d[i]
            for h in range(z):
                counts[h] += Y[i, h]
        elif p[i] > 0.0:
            free[m] = i
            m += 1
    on = np.zeros(m, np.bool_)
    pk = 0.0
    pd = 0.0
    # Gray-code walk: consecutive patterns differ in exactly one client
    for step in range(1 << m):
        if step > 0:
            b = 0
            while not (step >> b) & 1:
                b += 1
            i = free[b]
            sign = -1.0 if on[b] else 1.0
            on[b] = not on[b]
            total += sign * d[i]
            for h in range(z):
                counts[h] += sign * Y[i, h]
        w = 1.0
        for a in range(m):
            w *= p[free[a]] if on[a] else 1.0 - p[free[a]]
        if total < data_thr:
            pd += w
        if total <= 0 or kld_counts(counts, total, q, kld_empty) > kld_thr:
            pk += w
    return pk, pd


@njit
def _gather(edge_of, j, members):
    k = 0
    for i in range(edge_of.shape[0]):
        if edge_of[i] == j:
            members[k] = i
            k += 1
    return k


@njit
def edge_violation(j, k, members, ysum_j, total_j, pd_j, count_j, p, d, Y, q, cap, params, modes):
    """Violation magnitude of edge j (0.0 means every constraint holds)."""
    viol = 0.0
    if count_j > cap[j]:
        viol += count_j - cap[j]
    km = modes[M_KLD]
    dm = modes[M_DATA]
    thr = params[P_KLD_THR]
    if km == KLD_DET:
        kl = kld_counts(ysum_j, total_j, q, params[P_KLD_EMPTY])
        if kl > thr:
            viol += kl - thr
    elif km == KLD_MARKOV:
        b = markov_bound(members, k, p, Y, d, q, thr)
        if b > params[P_DELTA]:
            viol += b - params[P_DELTA]
    if dm == DATA_DET:
        if total_j < params[P_DATA_THR]:
            viol += (params[P_DATA_THR] - total_j) / params[P_DATA_THR]
    elif dm == DATA_MARKOV:
        if pd_j < params[P_DATA_THR]:
            viol += (params[P_DATA_THR] - pd_j) / params[P_DATA_THR]
    if km == KLD_EXACT or dm == DATA_EXACT:
        if k > MAX_EXACT:
            pk, pdv = 1.0, 1.0
        else:
            pk, pdv = exact_probs(members, k, p, Y, d, q, thr, params[P_DATA_THR], params[P_KLD_EMPTY])
        if km == KLD_EXACT and pk > params[P_DELTA]:
            viol += pk - params[P_DELTA]
        if dm == DATA_EXACT and pdv > params[P_EPS]:
            viol += pdv - params[P_EPS]
    return viol


@njit
def evaluate(edge_of, p, d, Y, q, T, E, reach, cap, tb, eb, params, modes):
    """Objective and total constraint violation of a complete assignment."""
    n = edge_of.shape[0]
    s = cap.shape[0]
    z = q.shape[0]
    counts = np.zeros(s, np.int64)
    max_t = np.zeros(s)
    sum_e = np.zeros(s)
    total = np.zeros(s)
    pdat = np.zeros(s)
    ysum = np.zeros((s, z))
    nsel = 0
    slog = 0.0
    viol = 0.0
    for i in range(n):
        j = edge_of[i]
        if j < 0:
            continue
        if not reach[i, j] or T[i, j] >= COST_SENTINEL:
            viol += 1.0
        counts[j] += 1
        if T[i, j] > max_t[j]:
            max_t[j] = T[i, j]
        sum_e[j] += E[i, j]
        total[j] += d[i]
        pdat[j] += p[i] * d[i]
        for h in range(z):
            ysum[j, h] += Y[i, h]
        nsel += 1
        slog += math.log(p[i])
    members = np.empty(n, np.int64)
    kld_mean = 0.0
    for j in range(s):
        k = _gather(edge_of, j, members)
        viol += edge_violation(j, k, members, ysum[j], total[j], pdat[j], counts[j],
                               p, d, Y, q, cap, params, modes)
        if modes[M_OBJ] == OBJ_KLD:
            kld_mean += kld_counts(ysum[j], total[j], q, params[P_KLD_EMPTY]) / s
    if modes[M_OBJ] == OBJ_KLD:
        return kld_mean, viol
    L = params[P_ROUNDS]
    worst = 0.0
    energy = 0.0
    for j in range(s):
        t = L * max_t[j] + tb[j]
        if t > worst:
            worst = t
        energy += L * sum_e[j] + eb[j]
    cont = math.exp(slog / nsel) if nsel > 0 else 0.0
    return params[P_LT] * worst + params[P_LE] * energy - params[P_LC] * cont, viol


@njit
def objective(edge_of, p, d, Y, q, T, E, tb, eb, params, modes):
    """Objective of a complete assignment (no constraint evaluation)."""
    n = edge_of.shape[0]
    s = tb.shape[0]
    if modes[M_OBJ] == OBJ_KLD:
        z = q.shape[0]
        ysum = np.zeros((s, z))
        total = np.zeros(s)
        for i in range(n):
            j = edge_of[i]
            if j >= 0:
                total[j] += d[i]
                for h in range(z):
                    ysum[j, h] += Y[i, h]
        out = 0.0
        for j in range(s):
            out += kld_counts(ysum[j], total[j], q, params[P_KLD_EMPTY]) / s
        return out
    max_t = np.zeros(s)
    sum_e = np.zeros(s)
    nsel = 0
    slog = 0.0
    for i in range(n):
        j = edge_of[i]
        if j < 0:
            continue
        if T[i, j] > max_t[j]:
            max_t[j] = T[i, j]
        sum_e[j] += E[i, j]
        nsel += 1
        slog += math.log(p[i])
    L = params[P_ROUNDS]
    worst = 0.0
    energy = 0.0
    for j in range(s):
        t = L * max_t[j] + tb[j]
        if t > worst:
            worst = t
        energy += L * sum_e[j] + eb[j]
    cont = math.exp(slog / nsel) if nsel > 0 else 0.0
    return params[P_LT] * worst + params[P_LE] * energy - params[P_LC] * cont


@njit
def _move(i, j, sign, part, cnt, wdat, ysum, total, pdat, p, d, Y, dm):
    """Add (sign=+1) or remove (sign=-1) client i on edge j in the partial state."""
    z = Y.shape[1]
    part[i] = j if sign > 0 else -1
    cnt[j] += 1 if sign > 0 else -1
    wdat[j] += sign * (p[i] * d[i] if dm == DATA_MARKOV else d[i])
    total[j] += sign * d[i]
    pdat[j] += sign * p[i] * d[i]
    for h in range(z):
        ysum[j, h] += sign * Y[i, h]


@njit
def _delta(i, j, p, d, Y, q, T, E, counts, max_t, sum_e, total, ysum, nsel, slog, tb, params, modes):
    """Objective change from assigning client i to edge j on top of the current partial state."""
    s = counts.shape[0]
    if modes[M_OBJ] == OBJ_KLD:
        z = q.shape[0]
        before = kld_counts(ysum[j], total[j], q, params[P_KLD_EMPTY])
        buf = np.empty(z)
        for h in range(z):
            buf[h] = ysum[j, h] + Y[i, h]
        after = kld_counts(buf, total[j] + d[i], q, params[P_KLD_EMPTY])
        return (after - before) / s
    L = params[P_ROUNDS]
    old_worst = 0.0
    new_worst = 0.0
    for jj in range(s):
        t = L * max_t[jj] + tb[jj]
        if t > old_worst:
            old_worst = t
        if jj == j and T[i, j] > max_t[j]:
            t = L * T[i, j] + tb[jj]
        if t > new_worst:
            new_worst = t
    old_c = math.exp(slog / nsel) if nsel > 0 else 0.0
    new_c = math.exp((slog + math.log(p[i])) / (nsel + 1))
    return (params[P_LT] * (new_worst - old_worst) + params[P_LE] * L * E[i, j]
            - params[P_LC] * (new_c - old_c))


@njit
def goc_associate(selected, p, d, Y, q, T, E, reach, cap, tb, eb, params, modes, budget, out_edge):
    """Greedy gain-of-cost association followed by reverse-order backtracking.

    Writes the returned assignment into ``out_edge`` and returns
    ``(feasible, objective, violation, backtrack_nodes)``. When no feasible
    assignment is found within ``budget`` nodes, the least-violating leaf
    seen is returned.
    """
    n, s = reach.shape
    z = q.shape[0]
    edge_of = np.full(n, -1, np.int64)
    counts = np.zeros(s, np.int64)
    max_t = np.zeros(s)
    sum_e = np.zeros(s)
    total = np.zeros(s)
    ysum = np.zeros((s, z))
    nsel = 0
    slog = 0.0
    pending = np.empty(n, np.int64)
    n_pending = 0
    unassignable = False
    for i in range(n):
        if not selected[i]:
            continue
        n_opt = 0
        last = -1
        for j in range(s):
            if reach[i, j] and T[i, j] < COST_SENTINEL:
                n_opt += 1
                last = j
        if n_opt == 0:
            unassignable = True
        elif n_opt == 1:
            edge_of[i] = last
            counts[last] += 1
            if T[i, last] > max_t[last]:
                max_t[last] = T[i, last]
            sum_e[last] += E[i, last]
            total[last] += d[i]
            for h in range(z):
                ysum[last, h] += Y[i, h]
            nsel += 1
            slog += math.log(p[i])
        else:
            pending[n_pending] = i
            n_pending += 1

    if unassignable:
        for i in range(n):
            out_edge[i] = edge_of[i]
        return False, np.inf, np.inf, 0

    order = np.empty(n_pending, np.int64)
    opts = np.full((n_pending, s), -1, np.int64)
    n_opts = np.zeros(n_pending, np.int64)
    done = np.zeros(n, np.bool_)
    vals = np.empty(s)
    step = 0
    while step < n_pending:
        best = np.inf
        bi = -1
        bj = -1
        for a in range(n_pending):
            i = pending[a]
            if done[i]:
                continue
            for j in range(s):
                if not reach[i, j] or T[i, j] >= COST_SENTINEL or counts[j] >= cap[j]:
                    continue
                df = _delta(i, j, p, d, Y, q, T, E, counts, max_t, sum_e, total, ysum, nsel, slog,
                            tb, params, modes)
                if df < best:
                    best = df
                    bi = i
                    bj = j
        if bi < 0:
            break
        # alternative edges of bi, cheapest first; full edges go last
        m = 0
        for j in range(s):
            if reach[bi, j] and T[bi, j] < COST_SENTINEL:
                if counts[j] >= cap[j]:
                    v = np.inf
                else:
                    v = _delta(bi, j, p, d, Y, q, T, E, counts, max_t, sum_e, total, ysum, nsel,
                               slog, tb, params, modes)
                pos = m
                while pos > 0 and vals[pos - 1] > v:
                    vals[pos] = vals[pos - 1]
                    opts[step, pos] = opts[step, pos - 1]
                    pos -= 1
                vals[pos] = v
                opts[step, pos] = j
                m += 1
        n_opts[step] = m
        order[step] = bi
        done[bi] = True
        edge_of[bi] = bj
        counts[bj] += 1
        if T[bi, bj] > max_t[bj]:
            max_t[bj] = T[bi, bj]
        sum_e[bj] += E[bi, bj]
        total[bj] += d[bi]
        for h in range(z):
            ysum[bj, h] += Y[bi, h]
        nsel += 1
        slog += math.log(p[bi])
        step += 1
    # clients the greedy pass could not place (every reachable edge full)
    for a in range(n_pending):
        i = pending[a]
        if done[i]:
            continue
        m = 0
        for j in range(s):
            if reach[i, j] and T[i, j] < COST_SENTINEL:
                pos = m
                while pos > 0 and T[i, opts[step, pos - 1]] > T[i, j]:
                    opts[step, pos] = opts[step, pos - 1]
                    pos -= 1
                opts[step, pos] = j
                m += 1
        n_opts[step] = m
        order[step] = i
        edge_of[i] = opts[step, 0]
        done[i] = True
        step += 1

    obj, viol = evaluate(edge_of, p, d, Y, q, T, E, reach, cap, tb, eb, params, modes)
    if viol == 0.0:
        for i in range(n):
            out_edge[i] = edge_of[i]
        return True, obj, 0.0, 0

    best_obj = obj
    best_viol = viol
    for i in range(n):
        out_edge[i] = edge_of[i]

    # ---- reverse-order backtracking over the greedy order ----
    # Each edge is checked as soon as no remaining client can join it, so
    # every complete leaf reached is feasible.
    nk = n_pending
    dm = modes[M_DATA]
    km = modes[M_KLD]
    data_thr = params[P_DATA_THR]
    suf = np.zeros((nk + 1, s))
    sufcnt = np.zeros((nk + 1, s), np.int64)
    for a in range(nk - 1, -1, -1):
        i = order[a]
        w = p[i] * d[i] if dm == DATA_MARKOV else d[i]
        for j in range(s):
            suf[a, j] = suf[a + 1, j]
            sufcnt[a, j] = sufcnt[a + 1, j]
        for b in range(n_opts[a]):
            suf[a, opts[a, b]] += w
            sufcnt[a, opts[a, b]] += 1
    part = np.full(n, -1, np.int64)
    cnt = np.zeros(s, np.int64)
    wdat = np.zeros(s)
    ysum_p = np.zeros((s, z))
    tot_p = np.zeros(s)
    pd_p = np.zeros(s)
    is_pending = np.zeros(n, np.bool_)
    for a in range(nk):
        is_pending[order[a]] = True
    for i in range(n):
        if selected[i] and edge_of[i] >= 0 and not is_pending[i]:
            _move(i, edge_of[i], 1.0, part, cnt, wdat, ysum_p, tot_p, pd_p, p, d, Y, dm)
    members = np.empty(n, np.int64)
    for j in range(s):
        if dm != DATA_NONE and wdat[j] + suf[0, j] < data_thr:
            return False, best_obj, best_viol, 0
        if sufcnt[0, j] == 0:
            k = _gather(part, j, members)
            if edge_violation(j, k, members, ysum_p[j], tot_p[j], pd_p[j], cnt[j],
                              p, d, Y, q, cap, params, modes) > 0.0:
                return False, best_obj, best_viol, 0

    idx = np.zeros(nk + 1, np.int64)
    level = 0
    nodes = 0
    found = False
    while True:
        if level == nk:
            best_obj = objective(part, p, d, Y, q, T, E, tb, eb, params, modes)
            best_viol = 0.0
            for i in range(n):
                out_edge[i] = part[i]
            found = True
            break
        if idx[level] >= n_opts[level]:
            if level == 0:
                break
            idx[level] = 0
            level -= 1
            i = order[level]
            _move(i, part[i], -1.0, part, cnt, wdat, ysum_p, tot_p, pd_p, p, d, Y, dm)
            idx[level] += 1
            continue
        nodes += 1
        if nodes > budget:
            break
        i = order[level]
        j = opts[level, idx[level]]
        if cnt[j] >= cap[j]:
            idx[level] += 1
            continue
        _move(i, j, 1.0, part, cnt, wdat, ysum_p, tot_p, pd_p, p, d, Y, dm)
        ok = True
        if dm != DATA_NONE:
            for jj in range(s):
                if wdat[jj] + suf[level + 1, jj] < data_thr:
                    ok = False
                    break
        if ok and km == KLD_MARKOV and sufcnt[level + 1, j] > 0:
            # adding clients can only widen the ratio range and shrink the all-offline term
            k = _gather(part, j, members)
            off = 1.0
            for a in range(k):
                off *= 1.0 - p[members[a]]
            if (1.0 - off) * g_sum(members, k, Y, d, q) / params[P_KLD_THR] > params[P_DELTA]:
                ok = False
        if ok:
            for jj in range(s):
                if sufcnt[level + 1, jj] == 0 and sufcnt[level, jj] > 0:
                    k = _gather(part, jj, members)
                    if edge_violation(jj, k, members, ysum_p[jj], tot_p[jj], pd_p[jj], cnt[jj],
                                      p, d, Y, q, cap, params, modes) > 0.0:
                        ok = False
                        break
        if ok:
            level += 1
        else:
            _move(i, j, -1.0, part, cnt, wdat, ysum_p, tot_p, pd_p, p, d, Y, dm)
            idx[level] += 1
    return found, best_obj, best_viol, nodes
