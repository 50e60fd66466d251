"""Compiled trial loop for the vectorised engine.

Trials of a chunk run one after another on a single numpy ``Generator``;
numba draws from it with numpy's own algorithms, so the stream is consumed
exactly as the scalar path in ``seqident.rules`` consumes it.  All
floating-point operations mirror the scalar code.
"""
import numpy as np
from numba import njit

ORDERING, PROBABILISTIC, FULL, STABILIZED = 0, 1, 2, 3

DONE, NEED_ROW, INELIGIBLE = 0, 1, 2

# slots of the integer work vector
W_TRIAL, W_TIME, W_TOTAL, W_LASTBAD, W_NEXT, W_MASK, W_MISSING = range(7)
# slots of the float work vector
F_EXP, F_VAR = range(2)


@njit(cache=True)
def _order_desc(row, out):
    """Re-sort ``out`` by (-value, index), starting from its current order.

    The key is a strict total order, so the result does not depend on the
    starting permutation; keeping the previous step's order makes the
    insertion sort nearly linear.
    """
    m = row.shape[0]
    for i in range(1, m):
        k = out[i]
        v = row[k]
        j = i - 1
        while j >= 0:
            q = out[j]
            w = row[q]
            if w < v or (w == v and q > k):
                out[j + 1] = q
                j -= 1
            else:
                break
        out[j + 1] = k


@njit(cache=True)
def _decide(llr, lo, up, known, order, srt):
    """Sort, count positives and return (decision mask, positives)."""
    m = llr.shape[0]
    _order_desc(llr, order)
    pos = 0
    for i in range(m):
        srt[i] = llr[order[i]]
        if llr[i] > 0:
            pos += 1
    if known:
        size = lo
    else:
        size = pos
        if size < lo:
            size = lo
        if size > up:
            size = up
    mask = 0
    for i in range(size):
        mask |= np.int64(1) << order[i]
    return mask, pos


@njit(cache=True)
def _stop_scale(srt, pos, lo, up, known, a, b, c, d):
    m = srt.shape[0]
    if known:
        return (srt[lo - 1] - srt[lo]) / c
    low = srt[lo]
    s1 = 0.0
    if low < 0:
        s1 = -low / a
        if lo > 0:
            g = (srt[lo - 1] - low) / c
            if g < s1:
                s1 = g
    s2 = 0.0
    if lo <= pos and pos <= up:
        s2 = np.inf
        for i in range(m):
            v = srt[i]
            t = v / b if v > 0 else -v / a
            if t < s2:
                s2 = t
    s3 = 0.0
    top = srt[up - 1]
    if top > 0:
        s3 = top / b
        if up < m:
            g = (top - srt[up]) / d
            if g < s3:
                s3 = g
    s = s1
    if s2 > s:
        s = s2
    if s3 > s:
        s = s3
    return s


@njit(cache=True)
def _ordering_select(llr, order, side, n_hat, n_check, g_hat, g_check, z1, z2, sampled):
    """Stationary ordering rule; ``side`` is the estimated-anomalous bitmask.

    ``order`` ranks ``llr`` by (-value, index).  Returns False when a side
    asks for more sources than are eligible.
    """
    m = llr.shape[0]
    fh = np.floor(n_hat)
    fc = np.floor(n_check)
    k1 = int(fh)
    k2 = int(fc)
    if z1 < n_hat - fh:
        k1 += 1
    if z2 < n_check - fc:
        k2 += 1
    n1 = 0
    n2 = 0
    for i in range(m):
        sampled[i] = g_hat[i] or g_check[i]
        if g_hat[i]:
            k1 -= 1
        if g_check[i]:
            k2 -= 1
        inside = (side >> i) & 1
        if inside == 1 and not g_hat[i]:
            n1 += 1
        if inside == 0 and not g_check[i]:
            n2 += 1
    if k1 > n1 or k2 > n2:
        return False
    # largest LLRs outside: walk the ranking forward
    p = 0
    while k2 > 0:
        i = order[p]
        if ((side >> i) & 1) == 0 and not g_check[i]:
            sampled[i] = True
            k2 -= 1
        p += 1
    # smallest LLRs inside: walk the ranking backward
    p = m - 1
    while k1 > 0:
        i = order[p]
        if ((side >> i) & 1) == 1 and not g_hat[i]:
            sampled[i] = True
            k1 -= 1
        p -= 1
    return True


@njit(cache=True)
def _lookup(keys, rows, mask):
    k = np.searchsorted(keys, mask)
    if k < keys.shape[0] and keys[k] == mask:
        return rows[k]
    return -1


@njit(cache=True)
def run_chunk(rng, rule, lo, up, known, a, b, c, d, scales, horizon, truth_mask, frozen_mask,
              obs_mean, obs_sd, quad, lin, const,
              keys, rows, n_hat, n_check, g_hat, g_check, c_star, e_step, v_step,
              work_i, work_f, llr, counts, order,
              T, dec, obs, exp_out, var_out, settle, trunc, counts_out, llr_out):
    """Run (or resume) the trials of one chunk.

    Returns ``DONE``, ``NEED_ROW`` (the allocation for ``work_i[W_MISSING]`` is
    not in the table; the state is saved at a step boundary so the caller can
    add the row and call again) or ``INELIGIBLE``.
    """
    size = T.shape[0]
    G = scales.shape[0]
    m = llr.shape[0]
    srt = np.empty(m)
    sampled = np.zeros(m, dtype=np.bool_)
    init_mask = (np.int64(1) << lo) - 1
    t = work_i[W_TRIAL]
    while t < size:
        if work_i[W_TIME] < 0:
            # fresh trial
            for i in range(m):
                llr[i] = 0.0
                counts[i] = 0
                order[i] = i
            work_i[W_TIME] = 0
            work_i[W_TOTAL] = 0
            work_i[W_LASTBAD] = 0
            work_i[W_NEXT] = 0
            work_i[W_MASK] = init_mask
            work_f[F_EXP] = 0.0
            work_f[F_VAR] = 0.0
        n = work_i[W_TIME]
        total = work_i[W_TOTAL]
        last_bad = work_i[W_LASTBAD]
        gnext = work_i[W_NEXT]
        mask = work_i[W_MASK]
        expd = work_f[F_EXP]
        var = work_f[F_VAR]
        while gnext < G and n < horizon:
            side = frozen_mask if rule == STABILIZED else mask
            row = -1
            if rule != FULL:
                row = _lookup(keys, rows, side)
                if row < 0:
                    work_i[W_TIME] = n
                    work_i[W_TOTAL] = total
                    work_i[W_LASTBAD] = last_bad
                    work_i[W_NEXT] = gnext
                    work_i[W_MASK] = mask
                    work_f[F_EXP] = expd
                    work_f[F_VAR] = var
                    work_i[W_TRIAL] = t
                    work_i[W_MISSING] = side
                    return NEED_ROW
            if rule == FULL:
                for i in range(m):
                    sampled[i] = True
                expd += m
            elif rule == PROBABILISTIC:
                for i in range(m):
                    sampled[i] = rng.random() < c_star[row, i]
                expd += e_step[row]
                var += v_step[row]
            else:
                z1 = rng.random()
                z2 = rng.random()
                if not _ordering_select(llr, order, side, n_hat[row], n_check[row], g_hat[row], g_check[row],
                                        z1, z2, sampled):
                    work_i[W_TRIAL] = t
                    return INELIGIBLE
                expd += e_step[row]
                var += v_step[row]
            for i in range(m):
                if sampled[i]:
                    x = obs_mean[i] + obs_sd[i] * rng.standard_normal()
                    llr[i] += (quad[i] * x + lin[i]) * x + const[i]
                    counts[i] += 1
                    total += 1
            n += 1
            mask, pos = _decide(llr, lo, up, known, order, srt)
            if mask != truth_mask:
                last_bad = n
            s = _stop_scale(srt, pos, lo, up, known, a, b, c, d)
            while gnext < G and scales[gnext] <= s:
                T[t, gnext] = n
                dec[t, gnext] = mask
                obs[t, gnext] = total
                exp_out[t, gnext] = expd
                var_out[t, gnext] = var
                settle[t, gnext] = last_bad + 1 if mask == truth_mask else -1
                gnext += 1
        # horizon reached: every open scale is truncated
        for g in range(gnext, G):
            T[t, g] = n
            dec[t, g] = mask
            obs[t, g] = total
            exp_out[t, g] = expd
            var_out[t, g] = var
            settle[t, g] = last_bad + 1 if mask == truth_mask else -1
            trunc[t, g] = True
        for i in range(m):
            counts_out[t, i] = counts[i]
            llr_out[t, i] = llr[i]
        t += 1
        work_i[W_TRIAL] = t
        work_i[W_TIME] = -1
    return DONE
