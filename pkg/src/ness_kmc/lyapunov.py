"""Lyapunov functions, set classification and Monte-Carlo drift estimators.

V is the multi-scale sum over every contiguous block of sites,
``V(E) = sum_{n,k} (E_k + ... + E_{k+n-1})^(a_n*eta - 1)``, with
``a_n = 1 - (2^(n-1) - 1)/(2^N - 1)``.  W is the total energy.  The bad set
is B = {V > M0}, the active set G is its complement and the reference set
is C = {V <= M0, W <= M1}.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

from . import kernels as K_
from .model import ModelParams, energy_state

__all__ = [
    "ExponentSeq",
    "LyapunovValue",
    "Classification",
    "DriftEstimate",
    "exponent_seq",
    "v_component",
    "v_total",
    "w_total",
    "classify",
    "classify_many",
    "v_many",
    "alpha_exponent",
    "jump_samples",
    "drift_estimate_jump",
    "drift_estimate_time_h",
    "drift_estimate_induced_W",
    "calibrate_thresholds",
    "PILOT_STREAM",
]

PILOT_STREAM = 0xFFFF << 48
SATURATE = 1e308


@dataclass(frozen=True)
class ExponentSeq:
    """The exact sequence a_1..a_N (as fractions) and eta."""

    a: tuple
    eta: float

    @property
    def N(self):
        return len(self.a)

    @property
    def values(self):
        return np.array([float(x) for x in self.a])

    @property
    def exponents(self):
        """a_n*eta - 1 for n = 1..N (all negative)."""
        return self.values * self.eta - 1.0


def exponent_seq(N, eta):
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    d = 2**int(N) - 1
    return ExponentSeq(tuple(1 - Fraction(2**(m - 1) - 1, d) for m in range(1, int(N) + 1)), float(eta))


def _seq_for(params, seq):
    seq = seq or exponent_seq(params.N, params.eta)
    if seq.N != params.N:
        raise ValueError("exponent sequence length does not match N")
    return seq


def _power(s, e):
    if s <= 0.0:
        return math.inf
    z = e * math.log(s)
    return math.inf if z > math.log(SATURATE) else math.exp(z)


def v_component(state, n, k, seq):
    """(E_k + ... + E_{k+n-1})^(a_n*eta - 1), evaluated in the log domain."""
    e = energy_state(state, seq.N)
    N = e.size
    if not (1 <= n <= N and 1 <= k <= N - n + 1):
        raise IndexError(f"component ({n}, {k}) out of range for N={N}")
    s = float(np.sum(e[k - 1:k - 1 + n]))
    return _power(s, float(seq.a[n - 1]) * seq.eta - 1.0)


class LyapunovValue(NamedTuple):
    value: float
    components: Optional[np.ndarray] = None


def v_total(state, seq, components=False):
    """V(state); with ``components=True`` also the (N, N) matrix whose entry
    [n-1, k-1] is V_{n,k} (NaN where k > N-n+1)."""
    e = energy_state(state, seq.N)
    value = K_.v_total(e, e.size, seq.exponents)
    comp = None
    if components:
        N = e.size
        comp = np.full((N, N), np.nan)
        for n in range(1, N + 1):
            for k in range(1, N - n + 2):
                comp[n - 1, k - 1] = v_component(e, n, k, seq)
    return LyapunovValue(value, comp)


def w_total(state):
    return float(np.sum(energy_state(state)))


class Classification(NamedTuple):
    in_B: bool
    in_G: bool
    in_C: bool


def _thresholds(params):
    if not params.calibrated:
        raise ValueError("M0 and M1 must be set (calibrate_thresholds) before classifying")
    return params.M0, params.M1


def classify(state, params, seq=None):
    seq = _seq_for(params, seq)
    M0, M1 = _thresholds(params)
    e = energy_state(state, params.N)
    in_g, in_c = K_.classify(e, e.size, seq.exponents, M0, M1)
    return Classification(not in_g, bool(in_g), bool(in_c))


@njit(cache=True)
def _v_rows(states, expo):
    n, N = states.shape
    out = np.empty(n)
    for i in range(n):
        out[i] = K_.v_total(states[i], N, expo)
    return out


def v_many(states, seq):
    states = np.ascontiguousarray(states, dtype=np.float64)
    return _v_rows(states.reshape(-1, states.shape[-1]), seq.exponents).reshape(states.shape[:-1])


def classify_many(states, params, seq=None):
    """(in_G, in_C) boolean arrays for a stack of states."""
    seq = _seq_for(params, seq)
    M0, M1 = _thresholds(params)
    v = v_many(states, seq)
    in_g = v <= M0
    return in_g, in_g & (np.asarray(states).sum(axis=-1) <= M1)


def alpha_exponent(eta):
    """Drift exponent 1 - 1/(2(1 - eta))."""
    return 1.0 - 1.0 / (2.0 * (1.0 - eta))


class DriftEstimate(NamedTuple):
    mean_change: float
    std_error: float


def _estimate(values, base):
    values = np.asarray(values, dtype=float)
    n = values.size
    diff = values - base
    return DriftEstimate(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n)))


@njit(cache=True, nogil=True)
def _one_jump(E0, N, TL, TR, K, seed, stream, n, out_clock, out_states):
    rates = np.empty(N + 1)
    E = np.empty(N)
    total = K_.fill_rates(E0, N, TL, TR, K, rates)
    for i in range(n):
        E[:] = E0
        dt, j, p, x = K_.draw_event(rates, total, N, TL, TR, np.uint64(seed),
                                    np.uint64(stream), np.uint64(i), 0)
        K_.apply_event(E, j, p, x, N)
        out_clock[i] = j + 1
        out_states[i] = E


def _total_rate(e, params):
    return K_.fill_rates(e, e.size, params.T_L, params.T_R, params.K, np.empty(e.size + 1))


def jump_samples(state, params, samples, rng):
    """Clocks (1-based) and post-states of ``samples`` independent first jumps."""
    e = energy_state(state, params.N)
    if _total_rate(e, params) <= 0.0:
        raise ValueError("every clock is frozen at this state")
    clocks = np.empty(samples, dtype=np.int64)
    post = np.empty((samples, params.N))
    _one_jump(e, params.N, params.T_L, params.T_R, params.K, rng.seed, rng.stream_id,
              samples, clocks, post)
    return clocks, post


def drift_estimate_jump(state, params, seq, samples, rng):
    """Monte-Carlo E[V(E after one jump)] - V(E) with its standard error."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    seq = _seq_for(params, seq)
    _, post = jump_samples(state, params, samples, rng)
    return _estimate(v_many(post, seq), v_total(state, seq).value)


# conditional Monte Carlo: each event's exchange fraction p is integrated out.
# Dyadic panels in the distance to either end of [0, 1] resolve the
# p^(a*eta - 1) singularities; the last stretch [0, 2^-(L+1)] is integrated
# exactly under a linear-in-p block sum.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_LEVELS = 24


@njit(cache=True, nogil=True)
def _post(E, j, p, q, x, N, out):
    """Post-event state with fractions (p, q = 1 - p) given separately so the
    small side keeps full relative precision."""
    out[:] = E
    if j == 0 or j == N:
        site = 0 if j == 0 else N - 1
        out[site] = p * (E[site] + x)
    else:
        s = E[j - 1] + E[j]
        out[j - 1] = p * s
        out[j] = q * s


@njit(cache=True, nogil=True)
def _tail(E, j, x, N, TL, TR, K, expo, tau, v0, left, delta, a, b, rates):
    """Exact integral over the end stretch of width ``delta`` (left: p near 0)."""
    if left:
        _post(E, j, 0.0, 1.0, x, N, a)
        _post(E, j, delta, 1.0 - delta, x, N, b)
    else:
        _post(E, j, 1.0, 0.0, x, N, a)
        _post(E, j, 1.0 - delta, delta, x, N, b)
    acc = 0.0
    for k in range(N):
        b0 = 0.0
        b1 = 0.0
        for n in range(N - k):
            b0 += a[k + n]
            b1 += b[k + n]
            g = expo[n]
            if abs(b1 - b0) <= 1e-6 * max(b0, b1):
                acc += delta * (0.5 * (b0 + b1)) ** g
            else:
                hi = b1 if b1 > b0 else b0
                lo = b0 if b1 > b0 else b1
                acc += (hi ** (g + 1.0) - lo ** (g + 1.0)) / ((g + 1.0) * (hi - lo) / delta)
    if left:
        _post(E, j, 0.5 * delta, 1.0 - 0.5 * delta, x, N, a)
    else:
        _post(E, j, 1.0 - 0.5 * delta, 0.5 * delta, x, N, a)
    r = K_.fill_rates(a, N, TL, TR, K, rates)
    return math.exp(-r * tau) * (acc - delta * v0)


@njit(cache=True, nogil=True)
def _last_event_term(E, j, x, N, TL, TR, K, expo, tau, v0, gx, gw, levels, a, b, rates):
    """Integral over p of exp(-R(post) tau) (V(post) - v0): the conditional
    expectation of the event's contribution if it is the last one before h."""
    acc = 0.0
    for side in range(2):
        lo = 0.5
        for _ in range(levels):
            hi = lo
            lo = 0.5 * hi
            mid = 0.5 * (hi + lo)
            half = 0.5 * (hi - lo)
            for i in range(gx.shape[0]):
                d = mid + half * gx[i]
                if side == 0:
                    _post(E, j, d, 1.0 - d, x, N, a)
                else:
                    _post(E, j, 1.0 - d, d, x, N, a)
                r = K_.fill_rates(a, N, TL, TR, K, rates)
                acc += half * gw[i] * math.exp(-r * tau) * (K_.v_total(a, N, expo) - v0)
        acc += _tail(E, j, x, N, TL, TR, K, expo, tau, v0, side == 0, lo, a, b, rates)
    return acc


@njit(cache=True, nogil=True)
def _drift_h_batch(start, stop, E0, N, TL, TR, K, h, expo, v0, seed, stream, gx, gw, levels, out):
    E = np.empty(N)
    a = np.empty(N)
    b = np.empty(N)
    rates = np.empty(N + 1)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    sub = np.uint64(0)
    for i in range(start, stop):
        E[:] = E0
        t = 0.0
        acc = 0.0
        counter = 0
        while True:
            total = K_.fill_rates(E, N, TL, TR, K, rates)
            if total <= 0.0:
                break
            dt, j, p, x = K_.draw_event(rates, total, N, TL, TR, k0, k1, np.uint64(i), counter)
            t += dt
            if t >= h:
                break
            acc += _last_event_term(E, j, x, N, TL, TR, K, expo, h - t, v0, gx, gw, levels, a, b, rates)
            K_.apply_event(E, j, p, x, N)
            counter += 1
        out[i - start] = acc


def drift_estimate_time_h(state, params, seq, samples, rng, workers=1, conditional=True):
    """Monte-Carlo (P^h V)(E) - V(E) from ``samples`` runs of length h.

    With ``conditional`` (default) every event of a run contributes the
    expectation, over its uniform fraction p, of V(post-state) - V(E)
    weighted by the chance that no further clock rings before h.  This is
    an unbiased estimator on the same runs; the plain estimator
    (``conditional=False``) averages V(E_h) - V(E) and has infinite
    variance, because V(E_h) inherits the p^(a*eta - 1) tail of a site
    emptied by a ring.
    """
    from .ensemble import map_chunks

    if samples < 100:
        raise ValueError("need at least 100 samples")
    seq = _seq_for(params, seq)
    e = energy_state(state, params.N)
    if _total_rate(e, params) <= 0.0:
        return DriftEstimate(0.0, 0.0)
    v0 = v_total(e, seq).value
    if not math.isfinite(v0):
        raise ValueError("V is infinite at this state")

    if conditional:
        def run(a, b):
            out = np.empty(b - a)
            _drift_h_batch(a, b, e, params.N, params.T_L, params.T_R, params.K, params.h, seq.exponents,
                           v0, rng.seed, rng.stream_id, _GL_X, _GL_W, _LEVELS, out)
            return out

        return _estimate(np.concatenate(map_chunks(run, samples, workers)), 0.0)

    times = np.array([params.h])

    def run(a, b):
        out = np.empty((b - a, 1, params.N))
        ev = np.empty(b - a, dtype=np.int64)
        K_.snapshot_batch(a, b, K_.LAW_POINT, e, params.N, params.T_L, params.T_R, params.K,
                          times, rng.seed, rng.stream_id, False, out, ev)
        return v_many(out[:, 0, :], seq)

    vals = np.concatenate(map_chunks(run, samples, workers))
    return _estimate(vals, v0)


def drift_estimate_induced_W(state, params, seq, samples, rng, n_max=10**8, workers=1):
    """Monte-Carlo E[W at the next visit of the time-h chain to G] - W(E).

    The multiplicative factor of the induced-chain step is
    ``1 + mean_change / W(E)``.
    """
    from .ensemble import map_chunks

    if samples < 100:
        raise ValueError("need at least 100 samples")
    seq = _seq_for(params, seq)
    e = energy_state(state, params.N)
    if not classify(e, params, seq).in_G:
        raise ValueError("state is not in the active set G")

    def run(a, b):
        w = np.empty(b - a)
        st = np.empty(b - a, dtype=np.int64)
        K_.return_to_g_batch(a, b, K_.LAW_POINT, e, params.N, params.T_L, params.T_R, params.K,
                             params.h, seq.exponents, params.M0, rng.seed, rng.stream_id, False,
                             n_max, w, st)
        return w

    w = np.concatenate(map_chunks(run, samples, workers))
    if np.isnan(w).any():
        raise RuntimeError(f"{int(np.isnan(w).sum())} runs did not return to G within {n_max} steps")
    return _estimate(w, float(e.sum()))


def calibrate_thresholds(params, q=0.99, t_pilot=2000.0, burn_in=100.0, seq=None):
    """Set M0 and M1 to the q-quantiles of V and W along a pilot run from the
    flat state E_i = (T_L + T_R)/2 (samples on the h-grid after ``burn_in``).

    Returns a copy of ``params`` with the thresholds filled in.
    """
    seq = _seq_for(params, seq)
    states, _ = pilot_chain(params, t_pilot)
    states = states[int(math.ceil(burn_in / params.h)):]
    v = v_many(states, seq)
    w = states.sum(axis=1)
    M0 = max(float(np.quantile(v, q)), 1.0 + 1e-9)
    M1 = max(float(np.quantile(w, q)), 1.0 + 1e-9)
    return params.with_thresholds(M0, M1)


def pilot_chain(params, t_pilot, stream=PILOT_STREAM, initial=None):
    """Time-h chain of one long run (flat start by default)."""
    e = np.full(params.N, 0.5 * (params.T_L + params.T_R)) if initial is None else energy_state(initial, params.N)
    n = int(t_pilot / params.h)
    states = np.empty((n + 1, params.N))
    flux = np.empty((n + 1, 2))
    K_.grid_chain(e, params.N, params.T_L, params.T_R, params.K, params.h, n,
                  np.uint64(params.seed), np.uint64(stream), np.uint64(0), 0, states, flux)
    return states, flux
