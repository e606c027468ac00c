"""Compiled event loops.

All kernels share one draw protocol: event ``k`` of a trajectory consumes the
Philox block at counter ``(k, DOMAIN_EVENTS, sub, 0)`` under key
``(seed, stream)``; its four words are used, in order, for the waiting time,
the clock selection, the exchange fraction and the bath draw (the last word is
ignored for interior clocks).  Initial states are drawn from the
``DOMAIN_INITIAL`` blocks of the same key and ``sub``.

Ensemble kernels run trajectory indices ``[start, stop)`` and write only to
their own output rows, so chunks can be processed in any order or
concurrently (all kernels release the GIL).

Sampling convention on the time-h grid: the state after an event at time t is
seen at grid points n*h with t < n*h, i.e. an event exactly on a grid point
happens after the sample.
"""
import math

import numpy as np
from numba import njit

from .rng import DOMAIN_EVENTS, DOMAIN_INITIAL, philox_block, u01_open

LAW_POINT = 0
LAW_FLAT = 1
LAW_BOUNDARY = 2
LAW_EXP = 3

LOG_SATURATE = math.log(1e308)
INF = np.inf


@njit(cache=True, nogil=True)
def keys_for(i, seed, stream_base, by_stream):
    """Key and sub-stream for trajectory ``i`` of a batch."""
    if by_stream:
        return np.uint64(seed), np.uint64(stream_base) + np.uint64(i), np.uint64(0)
    return np.uint64(seed), np.uint64(stream_base), np.uint64(i)


@njit(cache=True, nogil=True)
def sample_initial(law, lp, N, k0, k1, sub, out):
    u = np.empty(N)
    nb = (N + 3) // 4
    idx = 0
    for b in range(nb):
        w = philox_block(k0, k1, np.uint64(b), np.uint64(DOMAIN_INITIAL), sub, np.uint64(0))
        for q in range(4):
            if idx < N:
                u[idx] = u01_open(w[q])
                idx += 1
    if law == LAW_POINT:
        for i in range(N):
            out[i] = lp[i]
    elif law == LAW_FLAT:
        for i in range(N):
            out[i] = lp[0] + (lp[1] - lp[0]) * u[i]
    elif law == LAW_BOUNDARY:
        site = int(lp[0]) - 1
        for i in range(N):
            if i == site:
                out[i] = lp[1] * u[i]
            else:
                out[i] = lp[2] + (lp[3] - lp[2]) * u[i]
    else:
        for i in range(N):
            out[i] = -lp[0] * math.log(u[i])


@njit(cache=True, nogil=True)
def fill_rates(E, N, TL, TR, K, rates):
    total = 0.0
    for i in range(N + 1):
        lo = TL if i == 0 else E[i - 1]
        hi = TR if i == N else E[i]
        m = lo if lo < hi else hi
        r = math.sqrt(m)
        if r > K:
            r = K
        rates[i] = r
        total += r
    return total


@njit(cache=True, nogil=True)
def draw_event(rates, total, N, TL, TR, k0, k1, sub, counter):
    """Waiting time, 0-based clock, fraction and bath draw of the next event."""
    w = philox_block(k0, k1, np.uint64(counter), np.uint64(DOMAIN_EVENTS), sub, np.uint64(0))
    dt = -math.log(u01_open(w[0])) / total
    target = u01_open(w[1]) * total
    acc = 0.0
    j = -1
    last = -1
    for i in range(N + 1):
        if rates[i] > 0.0:
            last = i
        acc += rates[i]
        if target < acc and rates[i] > 0.0:
            j = i
            break
    if j < 0:
        j = last
    p = u01_open(w[2])
    x = 0.0
    if j == 0:
        x = -TL * math.log(u01_open(w[3]))
    elif j == N:
        x = -TR * math.log(u01_open(w[3]))
    return dt, j, p, x


@njit(cache=True, nogil=True)
def apply_event(E, j, p, x, N):
    """Apply clock ``j`` (0-based); returns the energy change of W."""
    if j == 0 or j == N:
        site = 0 if j == 0 else N - 1
        old = E[site]
        new = p * (old + x)
        E[site] = new
        return new - old
    s = E[j - 1] + E[j]
    a = p * s
    b = s - a
    E[j - 1] = a
    E[j] = b if b > 0.0 else 0.0
    return 0.0


@njit(cache=True, nogil=True)
def v_total(E, N, expo):
    """Multi-scale Lyapunov function with saturation to +inf."""
    total = 0.0
    for k in range(N):
        s = 0.0
        for n in range(N - k):
            s += E[k + n]
            if s <= 0.0:
                return INF
            z = expo[n] * math.log(s)
            if z > LOG_SATURATE:
                return INF
            total += math.exp(z)
    return total


@njit(cache=True, nogil=True)
def w_total(E, N):
    s = 0.0
    for i in range(N):
        s += E[i]
    return s


@njit(cache=True, nogil=True)
def classify(E, N, expo, M0, M1):
    """(in_G, in_C) for the current state."""
    v = v_total(E, N, expo)
    in_g = v <= M0
    in_c = in_g and w_total(E, N) <= M1
    return in_g, in_c


@njit(cache=True, nogil=True)
def grid_after(t, h):
    """Smallest n with n*h > t."""
    n = int(t / h) + 1
    while n > 0 and (n - 1) * h > t:
        n -= 1
    while n * h <= t:
        n += 1
    return n


@njit(cache=True, nogil=True)
def grid_upto(t, h, cap):
    """Largest n <= cap with n*h <= t."""
    if t / h >= cap + 1:
        return cap
    n = int(t / h)
    while n > 0 and n * h > t:
        n -= 1
    while (n + 1) * h <= t:
        n += 1
    return n if n < cap else cap


@njit(cache=True, nogil=True)
def record_events(E, t, counter, t_end, N, TL, TR, K, k0, k1, sub,
                  out_t, out_clock, out_p, out_x, out_e):
    """Run from (E, t) until t_end, the buffer fills, or the chain freezes.

    Returns (n_recorded, t, counter, finished).  ``out_e`` receives the post
    values of the changed sites (second column NaN for bath events).
    """
    cap = out_t.shape[0]
    rates = np.empty(N + 1)
    n = 0
    while n < cap:
        total = fill_rates(E, N, TL, TR, K, rates)
        if total <= 0.0:
            return n, t, counter, True
        dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
        tn = t + dt
        if tn >= t_end:
            return n, t, counter, True
        apply_event(E, j, p, x, N)
        out_t[n] = tn
        out_clock[n] = j + 1
        out_p[n] = p
        out_x[n] = x if (j == 0 or j == N) else np.nan
        if j == 0:
            out_e[n, 0] = E[0]
            out_e[n, 1] = np.nan
        elif j == N:
            out_e[n, 0] = E[N - 1]
            out_e[n, 1] = np.nan
        else:
            out_e[n, 0] = E[j - 1]
            out_e[n, 1] = E[j]
        t = tn
        counter += 1
        n += 1
    return n, t, counter, False


@njit(cache=True, nogil=True)
def hitting_batch(start, stop, law, lp, N, TL, TR, K, h, expo, M0, M1,
                  seed, stream_base, by_stream, n_max, n_max_induced,
                  out_tau, out_tau_hat, out_events):
    """First n >= 1 with E_{nh} in C (grid index and induced-chain index).

    Runs stop at the hit, at grid index ``n_max`` or at induced index
    ``n_max_induced``; censored runs report -1.
    """
    E = np.empty(N)
    rates = np.empty(N + 1)
    for i in range(start, stop):
        k0, k1, sub = keys_for(i, seed, stream_base, by_stream)
        sample_initial(law, lp, N, k0, k1, sub, E)
        t = 0.0
        n_lo = 0
        induced = 0
        counter = 0
        tau = -1
        tau_hat = -1
        while True:
            total = fill_rates(E, N, TL, TR, K, rates)
            frozen = total <= 0.0
            if frozen:
                n_hi = n_max
                dt = 0.0
                j = 0
                p = 0.5
                x = 0.0
            else:
                dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
                n_hi = grid_upto(t + dt, h, n_max)
            lo1 = n_lo if n_lo > 1 else 1
            if lo1 <= n_hi:
                in_g, in_c = classify(E, N, expo, M0, M1)
                if in_g:
                    if in_c:
                        tau = lo1
                        tau_hat = induced + 1
                        break
                    span = n_hi - lo1 + 1
                    if induced + span >= n_max_induced:
                        break
                    induced += span
            if frozen or n_hi >= n_max:
                break
            apply_event(E, j, p, x, N)
            t = t + dt
            n_lo = grid_after(t, h)
            counter += 1
        out_tau[i - start] = tau
        out_tau_hat[i - start] = tau_hat
        out_events[i - start] = counter


@njit(cache=True, nogil=True)
def snapshot_batch(start, stop, law, lp, N, TL, TR, K, times,
                   seed, stream_base, by_stream, out_states, out_events):
    """States at the sorted ``times`` (left limits at exact event times)."""
    E = np.empty(N)
    rates = np.empty(N + 1)
    nt = times.shape[0]
    for i in range(start, stop):
        k0, k1, sub = keys_for(i, seed, stream_base, by_stream)
        sample_initial(law, lp, N, k0, k1, sub, E)
        t = 0.0
        counter = 0
        q = 0
        while q < nt:
            total = fill_rates(E, N, TL, TR, K, rates)
            if total <= 0.0:
                tn = INF
                dt = 0.0
                j = 0
                p = 0.5
                x = 0.0
            else:
                dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
                tn = t + dt
            while q < nt and times[q] <= tn:
                for s in range(N):
                    out_states[i - start, q, s] = E[s]
                q += 1
            if q >= nt:
                break
            apply_event(E, j, p, x, N)
            t = tn
            counter += 1
        out_events[i - start] = counter


@njit(cache=True, nogil=True)
def first_ring_batch(start, stop, law, lp, N, TL, TR, K, mask, t_max,
                     seed, stream_base, by_stream, out_time):
    """Time of the first ring of any clock flagged in ``mask`` (inf if none
    before ``t_max``)."""
    E = np.empty(N)
    rates = np.empty(N + 1)
    for i in range(start, stop):
        k0, k1, sub = keys_for(i, seed, stream_base, by_stream)
        sample_initial(law, lp, N, k0, k1, sub, E)
        t = 0.0
        counter = 0
        res = INF
        while True:
            total = fill_rates(E, N, TL, TR, K, rates)
            if total <= 0.0:
                break
            dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
            t = t + dt
            if t >= t_max:
                break
            if mask[j]:
                res = t
                break
            apply_event(E, j, p, x, N)
            counter += 1
        out_time[i - start] = res


@njit(cache=True, nogil=True)
def return_to_g_batch(start, stop, law, lp, N, TL, TR, K, h, expo, M0,
                      seed, stream_base, by_stream, n_max, out_w, out_steps):
    """W at the first grid index n >= 1 with E_{nh} in G (NaN if not within
    ``n_max`` steps)."""
    E = np.empty(N)
    rates = np.empty(N + 1)
    for i in range(start, stop):
        k0, k1, sub = keys_for(i, seed, stream_base, by_stream)
        sample_initial(law, lp, N, k0, k1, sub, E)
        t = 0.0
        n_lo = 0
        counter = 0
        w_hit = np.nan
        steps = -1
        while True:
            total = fill_rates(E, N, TL, TR, K, rates)
            frozen = total <= 0.0
            if frozen:
                n_hi = n_max
                dt = 0.0
                j = 0
                p = 0.5
                x = 0.0
            else:
                dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
                n_hi = grid_upto(t + dt, h, n_max)
            lo1 = n_lo if n_lo > 1 else 1
            if lo1 <= n_hi and v_total(E, N, expo) <= M0:
                w_hit = w_total(E, N)
                steps = lo1
                break
            if frozen or n_hi >= n_max:
                break
            apply_event(E, j, p, x, N)
            t = t + dt
            n_lo = grid_after(t, h)
            counter += 1
        out_w[i - start] = w_hit
        out_steps[i - start] = steps


@njit(cache=True, nogil=True)
def profile_batch(start, stop, law, lp, N, TL, TR, K, burn_in, t_end,
                  seed, stream_base, by_stream,
                  out_int, out_int2, out_flux, out_events):
    """Time integrals of E_i and E_i^2 over [burn_in, t_end) and in/out flux
    (out_flux[:, 0:2]) over [0, t_end), plus W(0), W(t_end) in columns 2, 3
    and in/out flux over [burn_in, t_end) in columns 4, 5."""
    E = np.empty(N)
    rates = np.empty(N + 1)
    for i in range(start, stop):
        r = i - start
        k0, k1, sub = keys_for(i, seed, stream_base, by_stream)
        sample_initial(law, lp, N, k0, k1, sub, E)
        for s in range(N):
            out_int[r, s] = 0.0
            out_int2[r, s] = 0.0
        f_in = 0.0
        f_out = 0.0
        f_in_w = 0.0
        f_out_w = 0.0
        w0 = w_total(E, N)
        t = 0.0
        counter = 0
        while True:
            total = fill_rates(E, N, TL, TR, K, rates)
            if total <= 0.0:
                tn = INF
                dt = 0.0
                j = 0
                p = 0.5
                x = 0.0
            else:
                dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
                tn = t + dt
            a = t if t > burn_in else burn_in
            b = tn if tn < t_end else t_end
            if b > a:
                for s in range(N):
                    out_int[r, s] += E[s] * (b - a)
                    out_int2[r, s] += E[s] * E[s] * (b - a)
            if tn >= t_end:
                break
            dw = apply_event(E, j, p, x, N)
            if dw > 0.0:
                f_in += dw
                if tn >= burn_in:
                    f_in_w += dw
            elif dw < 0.0:
                f_out -= dw
                if tn >= burn_in:
                    f_out_w -= dw
            t = tn
            counter += 1
        out_flux[r, 0] = f_in
        out_flux[r, 1] = f_out
        out_flux[r, 2] = w0
        out_flux[r, 3] = w_total(E, N)
        out_flux[r, 4] = f_in_w
        out_flux[r, 5] = f_out_w
        out_events[r] = counter


@njit(cache=True, nogil=True)
def grid_chain(E0, N, TL, TR, K, h, n_steps, k0, k1, sub, counter0,
               out_states, out_flux):
    """Time-h chain E_0..E_{n_steps} with cumulative in/out flux on [0, nh).

    ``out_states`` has n_steps+1 rows.  Returns the number of events used.
    """
    E = E0.copy()
    rates = np.empty(N + 1)
    t = 0.0
    n_lo = 0
    f_in = 0.0
    f_out = 0.0
    counter = counter0
    while True:
        total = fill_rates(E, N, TL, TR, K, rates)
        frozen = total <= 0.0
        if frozen:
            n_hi = n_steps
            dt = 0.0
            j = 0
            p = 0.5
            x = 0.0
        else:
            dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
            n_hi = grid_upto(t + dt, h, n_steps)
        for n in range(n_lo, n_hi + 1):
            for s in range(N):
                out_states[n, s] = E[s]
            out_flux[n, 0] = f_in
            out_flux[n, 1] = f_out
        if frozen or n_hi >= n_steps:
            break
        dw = apply_event(E, j, p, x, N)
        if dw > 0.0:
            f_in += dw
        else:
            f_out -= dw
        t = t + dt
        n_lo = grid_after(t, h)
        counter += 1
    return counter - counter0


@njit(cache=True, nogil=True)
def occupation_1d(E0, N, TL, TR, K, edges, n_burn, n_events, k0, k1, sub, site):
    """Holding-time weighted histogram of one site's energy.

    The first ``n_burn`` events are discarded; the state is then weighted by
    its holding time over the next ``n_events`` events.  Energies beyond the
    last edge fall into the top cell.
    """
    E = E0.copy()
    rates = np.empty(N + 1)
    nb = edges.shape[0] - 1
    w = np.zeros(nb)
    for counter in range(n_burn + n_events):
        total = fill_rates(E, N, TL, TR, K, rates)
        if total <= 0.0:
            break
        dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
        if counter >= n_burn:
            c = np.searchsorted(edges, E[site], side="right") - 1
            if c >= nb:
                c = nb - 1
            if c < 0:
                c = 0
            w[c] += dt
        apply_event(E, j, p, x, N)
    return w


@njit(cache=True, nogil=True)
def occupation_2d(E0, TL, TR, K, edges, n_burn, n_events, k0, k1, sub):
    """Holding-time weighted histogram of (E_1, E_2) for N = 2."""
    N = 2
    E = E0.copy()
    rates = np.empty(N + 1)
    nb = edges.shape[0] - 1
    w = np.zeros((nb, nb))
    for counter in range(n_burn + n_events):
        total = fill_rates(E, N, TL, TR, K, rates)
        if total <= 0.0:
            break
        dt, j, p, x = draw_event(rates, total, N, TL, TR, k0, k1, sub, counter)
        if counter >= n_burn:
            c0 = min(max(np.searchsorted(edges, E[0], side="right") - 1, 0), nb - 1)
            c1 = min(max(np.searchsorted(edges, E[1], side="right") - 1, 0), nb - 1)
            w[c0, c1] += dt
        apply_event(E, j, p, x, N)
    return w
