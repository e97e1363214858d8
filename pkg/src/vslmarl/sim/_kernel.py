"""Compiled inner loop of one car-following step.

Arrays must be sorted by (lane, x). Works entirely in SI units.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _free_term(v, v0, a, b, delta):
    if v <= v0:
        return a * (1.0 - (v / v0) ** delta)
    return -b * (1.0 - (v0 / v) ** (a * delta / b))


@numba.njit(cache=True)
def advance(lane, x, v, v0, compliant, length, seg_lo_x, seg_hi_x, seg_limit,
            sensor_x, dt, T, a, b, s0, delta, max_decel, cap_eps):
    """Return new positions, new speeds and crossing records.

    ``seg_lo_x``/``seg_hi_x`` are the x-interval [hi, lo) of each gantry
    segment in entry coordinates (x grows downstream); ``sensor_x`` is
    sorted ascending. Crossings come back as (vehicle index, sensor slot,
    crossing speed) triples.
    """
    n = x.size
    acc = np.empty(n)
    sqrt_ab = 2.0 * np.sqrt(a * b)
    ns = seg_limit.size
    for k in range(n):
        desired = v0[k]
        if compliant[k]:
            for g in range(ns):
                if seg_hi_x[g] < x[k] <= seg_lo_x[g]:
                    if seg_limit[g] < desired:
                        desired = seg_limit[g]
                    break
        acc_k = _free_term(v[k], desired, a, b, delta)
        if k + 1 < n and lane[k + 1] == lane[k]:
            gap = x[k + 1] - length[k + 1] - x[k]
            if gap <= 0.0:
                return x, v, np.empty((0, 3)), k
            dv = v[k] - v[k + 1]
            s_star = v[k] * T + v[k] * dv / sqrt_ab
            if s_star < 0.0:
                s_star = 0.0
            s_star += s0
            acc_k -= a * (s_star / gap) ** 2
        if acc_k > a:
            acc_k = a
        elif acc_k < -max_decel:
            acc_k = -max_decel
        acc[k] = acc_k

    x_new = np.empty(n)
    v_new = np.empty(n)
    for k in range(n):
        vn = v[k] + acc[k] * dt
        if vn < 0.0:
            x_new[k] = x[k] - v[k] * v[k] / (2.0 * acc[k])
            vn = 0.0
        else:
            x_new[k] = x[k] + 0.5 * (v[k] + vn) * dt
        v_new[k] = vn

    # leader-to-follower pass keeps every bumper gap > cap_eps
    for k in range(n - 2, -1, -1):
        if lane[k + 1] == lane[k]:
            cap = x_new[k + 1] - length[k + 1] - cap_eps
            if x_new[k] > cap:
                if cap < x[k]:
                    cap = x[k]
                x_new[k] = cap
                vn = 2.0 * (cap - x[k]) / dt - v[k]
                if vn < 0.0:
                    vn = 0.0
                if vn < v_new[k]:
                    v_new[k] = vn

    m = sensor_x.size
    count = 0
    rec = np.empty((n, 3))
    for k in range(n):
        for s in range(m):
            if x[k] < sensor_x[s] <= x_new[k]:
                if count == rec.shape[0]:
                    bigger = np.empty((2 * count, 3))
                    bigger[:count] = rec[:count]
                    rec = bigger
                rec[count, 0] = k
                rec[count, 1] = s
                rec[count, 2] = 0.5 * (v[k] + v_new[k])
                count += 1
    return x_new, v_new, rec[:count], -1


@numba.njit(cache=True)
def _idm(v, v0, gap, dv, T, a, b, s0, delta):
    acc = _free_term(v, v0, a, b, delta)
    if gap < np.inf:
        s_star = v * T + v * dv / (2.0 * np.sqrt(a * b))
        if s_star < 0.0:
            s_star = 0.0
        acc -= a * ((s0 + s_star) / gap) ** 2
    return acc


@numba.njit(cache=True)
def effective_desired(x, v0, compliant, seg_lo_x, seg_hi_x, seg_limit):
    """Desired speed after compliant drivers cap it at their segment's limit."""
    n = x.size
    out = v0.copy()
    for k in range(n):
        if compliant[k]:
            for g in range(seg_limit.size):
                if seg_hi_x[g] < x[k] <= seg_lo_x[g]:
                    if seg_limit[g] < out[k]:
                        out[k] = seg_limit[g]
                    break
    return out


@numba.njit(cache=True)
def lane_change_pass(lane, x, v, desired, length, eligible, u, n_lanes, direction,
                     p_consider, T, a, b, s0, delta, politeness, threshold, b_safe, bias):
    """Incentive-and-safety lane changes towards ``lane + direction``.

    Decisions use the pre-pass state; at most one vehicle enters any given gap
    of a target lane, so accepted moves never overlap. Returns the new lanes.
    """
    n = x.size
    starts = np.zeros(n_lanes + 1, np.int64)
    for k in range(n):
        starts[lane[k] + 1] += 1
    for l in range(n_lanes):
        starts[l + 1] += starts[l]
    new_lane = lane.copy()
    taken = np.zeros(n + n_lanes + 1, np.bool_)
    for k in range(n):
        if not eligible[k] or u[k] >= p_consider:
            continue
        t = lane[k] + direction
        if t < 0 or t >= n_lanes:
            continue
        # current situation
        own_lead = k + 1 if (k + 1 < n and lane[k + 1] == lane[k]) else -1
        if own_lead >= 0:
            gap_own = x[own_lead] - length[own_lead] - x[k]
            acc_cur = _idm(v[k], desired[k], gap_own, v[k] - v[own_lead], T, a, b, s0, delta)
        else:
            acc_cur = _idm(v[k], desired[k], np.inf, 0.0, T, a, b, s0, delta)
        # neighbours in the target lane
        lo = starts[t]
        hi = starts[t + 1]
        left = lo
        right = hi
        while left < right:
            mid = (left + right) // 2
            if x[mid] <= x[k]:
                left = mid + 1
            else:
                right = mid
        j = left
        gid = j + t
        if taken[gid]:
            continue
        lead = j if j < hi else -1
        fol = j - 1 if j > lo else -1
        if lead >= 0:
            gap_l = x[lead] - length[lead] - x[k]
            if gap_l <= s0:
                continue
            acc_new = _idm(v[k], desired[k], gap_l, v[k] - v[lead], T, a, b, s0, delta)
        else:
            acc_new = _idm(v[k], desired[k], np.inf, 0.0, T, a, b, s0, delta)
        d_others = 0.0
        if fol >= 0:
            gap_f = x[k] - length[k] - x[fol]
            if gap_f <= s0:
                continue
            acc_f_new = _idm(v[fol], desired[fol], gap_f, v[fol] - v[k], T, a, b, s0, delta)
            if acc_f_new < -b_safe:
                continue
            if lead >= 0:
                acc_f_old = _idm(v[fol], desired[fol], x[lead] - length[lead] - x[fol],
                                 v[fol] - v[lead], T, a, b, s0, delta)
            else:
                acc_f_old = _idm(v[fol], desired[fol], np.inf, 0.0, T, a, b, s0, delta)
            d_others += acc_f_new - acc_f_old
        if k - 1 >= 0 and lane[k - 1] == lane[k]:
            of = k - 1
            acc_o_old = _idm(v[of], desired[of], x[k] - length[k] - x[of], v[of] - v[k],
                             T, a, b, s0, delta)
            if own_lead >= 0:
                acc_o_new = _idm(v[of], desired[of], x[own_lead] - length[own_lead] - x[of],
                                 v[of] - v[own_lead], T, a, b, s0, delta)
            else:
                acc_o_new = _idm(v[of], desired[of], np.inf, 0.0, T, a, b, s0, delta)
            d_others += acc_o_new - acc_o_old
        gain = acc_new - acc_cur + politeness * d_others
        if direction > 0:
            gain -= bias
        else:
            gain += bias
        if gain > threshold:
            new_lane[k] = t
            taken[gid] = True
    return new_lane
