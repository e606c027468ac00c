"""Exact event-driven simulation and the time-h sampling chain."""
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as K_
from .model import Event, ModelParams, energy_state
from .rng import RngStream

__all__ = [
    "CHECKPOINT_EVERY",
    "Trajectory",
    "SampleChain",
    "FluxAccountant",
    "HittingDetector",
    "TimeHSampler",
    "sample_next_event",
    "step",
    "run_trajectory",
    "sample_time_h_chain",
    "write_trajectory_csv",
    "write_chain_csv",
    "write_checkpoint",
    "read_checkpoint",
    "fmt",
]

CHECKPOINT_EVERY = 2**16


def fmt(x):
    """Shortest round-trip decimal for floats, plain ints otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _key(rng):
    return np.uint64(rng.seed), np.uint64(rng.stream_id)


def sample_next_event(state, params, rng, counter=0, t=0.0, sub=0):
    """Draw the next event from ``state``.

    Returns ``(waiting_time, Event)``, or ``None`` when every clock is frozen.
    ``counter`` is the event index within the stream (draws are addressed, not
    consumed, so repeated calls with the same counter repeat the draw).
    """
    e = energy_state(state, params.N)
    rates = np.empty(params.N + 1)
    total = K_.fill_rates(e, params.N, params.T_L, params.T_R, params.K, rates)
    if total <= 0.0:
        return None
    k0, k1 = _key(rng)
    dt, j, p, x = K_.draw_event(rates, total, params.N, params.T_L, params.T_R,
                                k0, k1, np.uint64(sub), counter)
    bath = x if (j == 0 or j == params.N) else None
    return dt, Event(clock=j + 1, time=t + dt, p=p, bath_draw=bath)


def step(state, event):
    """Apply ``event`` to ``state`` and return the new state."""
    e = energy_state(state)
    N = e.size
    c = event.clock
    if not 1 <= c <= N + 1:
        raise ValueError(f"clock {c} does not exist for N={N}")
    boundary = c == 1 or c == N + 1
    if boundary != (event.bath_draw is not None):
        raise ValueError("bath draw must be present exactly for bath clocks")
    K_.apply_event(e, c - 1, event.p, event.bath_draw if boundary else 0.0, N)
    return e


@dataclass
class Trajectory:
    """Event record of one run.

    Events are stored as deltas: time, 1-based clock, fraction, bath draw (NaN
    for interior clocks) and the post-event values of the changed sites.  Full
    states are kept every ``CHECKPOINT_EVERY`` events.
    """

    initial: np.ndarray
    params: ModelParams
    t_end: float
    times: np.ndarray
    clocks: np.ndarray
    ps: np.ndarray
    bath_draws: np.ndarray
    post: np.ndarray
    checkpoints: list = field(default_factory=list)
    seed: int = 0
    stream_id: int = 0

    @property
    def n_events(self):
        return int(self.times.size)

    def events(self):
        for k in range(self.n_events):
            x = self.bath_draws[k]
            yield Event(int(self.clocks[k]), float(self.times[k]), float(self.ps[k]),
                        None if np.isnan(x) else float(x))

    def _write(self, e, k):
        c = int(self.clocks[k])
        N = e.size
        if c == 1:
            e[0] = self.post[k, 0]
        elif c == N + 1:
            e[N - 1] = self.post[k, 0]
        else:
            e[c - 2] = self.post[k, 0]
            e[c - 1] = self.post[k, 1]

    def state_after(self, k):
        """State after the first ``k`` events (k = 0 gives the initial state)."""
        if not 0 <= k <= self.n_events:
            raise IndexError(k)
        base = min(k // CHECKPOINT_EVERY, len(self.checkpoints) - 1)
        if base < 0:
            e, start = self.initial.copy(), 0
        else:
            e, start = self.checkpoints[base].copy(), base * CHECKPOINT_EVERY
        for j in range(start, k):
            self._write(e, j)
        return e

    def state_at(self, t):
        """State at time t: events at times < t have happened."""
        return self.state_after(int(np.searchsorted(self.times, t, side="left")))

    def all_states(self):
        """(n_events + 1, N) array of the state after each event."""
        N = self.initial.size
        n = self.n_events
        out = np.empty((n + 1, N))
        out[0] = self.initial
        c = self.clocks
        for s in range(N):
            vals = np.full(n + 1, np.nan)
            vals[0] = self.initial[s]
            hit = np.zeros(n, dtype=bool)
            if s == 0:
                m = c == 1
                vals[1:][m] = self.post[m, 0]
                hit |= m
            if s == N - 1:
                m = c == N + 1
                vals[1:][m] = self.post[m, 0]
                hit |= m
            m = (c == s + 2) & (c <= N)
            vals[1:][m] = self.post[m, 0]
            hit |= m
            m = (c == s + 1) & (c >= 2) & (c <= N)
            vals[1:][m] = self.post[m, 1]
            hit |= m
            idx = np.where(np.concatenate(([True], hit)), np.arange(n + 1), 0)
            np.maximum.accumulate(idx, out=idx)
            out[:, s] = vals[idx]
        return out


class FluxAccountant:
    """Cumulative gross in/out flow through the bath clocks."""

    def __init__(self):
        self.flux_in = 0.0
        self.flux_out = 0.0

    def on_start(self, state, t):
        pass

    def on_event(self, event, pre, post):
        if event.bath_draw is None:
            return
        site = 0 if event.clock == 1 else pre.size - 1
        dw = float(post[site] - pre[site])
        if dw > 0:
            self.flux_in += dw
        else:
            self.flux_out -= dw

    def on_finish(self, t_end):
        pass


class HittingDetector:
    """First grid index n >= 1 whose sampled state satisfies ``predicate``."""

    def __init__(self, predicate, h):
        self.predicate = predicate
        self.h = h
        self.hit = None
        self._state = None
        self._t = 0.0

    def on_start(self, state, t):
        self._state = state.copy()
        self._t = t

    def _scan(self, t_next):
        if self.hit is not None:
            return
        lo = max(K_.grid_after(self._t, self.h), 1) if self._t > 0 else 1
        hi = K_.grid_upto(t_next, self.h, 2**62)
        if lo <= hi and self.predicate(self._state):
            self.hit = lo

    def on_event(self, event, pre, post):
        self._scan(event.time)
        self._state = post.copy()
        self._t = event.time

    def on_finish(self, t_end):
        self._scan(t_end)


class TimeHSampler:
    """Collects E_{nh} for n*h <= t_end."""

    def __init__(self, h):
        self.h = h
        self.samples = []
        self._state = None
        self._t = 0.0

    def on_start(self, state, t):
        self._state = state.copy()
        self._t = t

    def _emit(self, t_next):
        lo = K_.grid_after(self._t, self.h) if self._t > 0 else 0
        hi = K_.grid_upto(t_next, self.h, 2**62)
        for _ in range(lo, hi + 1):
            self.samples.append(self._state.copy())

    def on_event(self, event, pre, post):
        self._emit(event.time)
        self._state = post.copy()
        self._t = event.time

    def on_finish(self, t_end):
        self._emit(t_end)


def run_trajectory(initial, params, t_end, rng, observers=()):
    """Simulate from ``initial`` until ``t_end`` (or until every clock freezes).

    The run is a pure function of ``(initial, params, rng.seed,
    rng.stream_id)``.  Observers receive ``on_start``, then ``on_event(event,
    pre, post)`` for every event in order, then ``on_finish(t_end)``.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    e = energy_state(initial, params.N)
    init = e.copy()
    k0, k1 = _key(rng)
    sub = np.uint64(0)
    parts = []
    checkpoints = []
    t = 0.0
    counter = 0
    chunk = CHECKPOINT_EVERY
    while True:
        checkpoints.append(e.copy())
        bt = np.empty(chunk)
        bc = np.empty(chunk, dtype=np.int64)
        bp = np.empty(chunk)
        bx = np.empty(chunk)
        be = np.empty((chunk, 2))
        n, t, counter, done = K_.record_events(e, t, counter, float(t_end), params.N, params.T_L,
                                               params.T_R, params.K, k0, k1, sub,
                                               bt, bc, bp, bx, be)
        parts.append((bt[:n], bc[:n], bp[:n], bx[:n], be[:n]))
        if done:
            break
    traj = Trajectory(
        initial=init,
        params=params,
        t_end=float(t_end),
        times=np.concatenate([q[0] for q in parts]),
        clocks=np.concatenate([q[1] for q in parts]),
        ps=np.concatenate([q[2] for q in parts]),
        bath_draws=np.concatenate([q[3] for q in parts]),
        post=np.concatenate([q[4] for q in parts]),
        checkpoints=checkpoints,
        seed=int(rng.seed),
        stream_id=int(rng.stream_id),
    )
    if observers:
        _notify(traj, observers)
    return traj


def _notify(traj, observers):
    pre = traj.initial.copy()
    for ob in observers:
        ob.on_start(pre.copy(), 0.0)
    for k, ev in enumerate(traj.events()):
        post = pre.copy()
        traj._write(post, k)
        for ob in observers:
            ob.on_event(ev, pre, post)
        pre = post
    for ob in observers:
        ob.on_finish(traj.t_end)


@dataclass
class SampleChain:
    """The time-h chain with cumulative fluxes and classification flags.

    ``flux_in_cum[n]`` / ``flux_out_cum[n]`` cover [0, n*h).  ``in_G`` and
    ``in_C`` are None when the thresholds are not set.
    """

    h: float
    states: np.ndarray
    flux_in_cum: np.ndarray
    flux_out_cum: np.ndarray
    in_G: Optional[np.ndarray] = None
    in_C: Optional[np.ndarray] = None

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def flux_in(self):
        return np.diff(self.flux_in_cum)

    @property
    def flux_out(self):
        return np.diff(self.flux_out_cum)


def _bath_flux(traj, states):
    """Per-event (inflow, outflow) contributions."""
    n = traj.n_events
    fin = np.zeros(n)
    fout = np.zeros(n)
    if n == 0:
        return fin, fout
    dw = states[1:].sum(axis=1) - states[:-1].sum(axis=1)
    N = traj.initial.size
    bath = (traj.clocks == 1) | (traj.clocks == N + 1)
    # exact site difference avoids cancellation in the row sums
    site = np.where(traj.clocks == 1, 0, N - 1)
    k = np.nonzero(bath)[0]
    dw[k] = states[k + 1, site[k]] - states[k, site[k]]
    fin[bath] = np.maximum(dw[bath], 0.0)
    fout[bath] = np.maximum(-dw[bath], 0.0)
    return fin, fout


def sample_time_h_chain(traj, params=None):
    """Sample ``traj`` at n*h, n = 0..floor(t_end/h)."""
    params = params or traj.params
    h = params.h
    if traj.t_end < h:
        raise ValueError("trajectory shorter than one sampling step")
    n_max = K_.grid_upto(traj.t_end, h, 2**62)
    grid = np.arange(n_max + 1) * h
    states = traj.all_states()
    idx = np.searchsorted(traj.times, grid, side="left")
    fin, fout = _bath_flux(traj, states)
    cin = np.concatenate(([0.0], np.cumsum(fin)))
    cout = np.concatenate(([0.0], np.cumsum(fout)))
    chain = SampleChain(h=h, states=states[idx], flux_in_cum=cin[idx], flux_out_cum=cout[idx])
    if params.calibrated:
        from .lyapunov import classify_many
        chain.in_G, chain.in_C = classify_many(chain.states, params)
    return chain


def write_chain_csv(chain, path):
    N = chain.states.shape[1]
    cols = ["n", "t"] + [f"E_{i + 1}" for i in range(N)] + ["in_G", "in_C", "flux_in_cum", "flux_out_cum"]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(cols) + "\n")
        for n in range(chain.states.shape[0]):
            g = "" if chain.in_G is None else fmt(bool(chain.in_G[n]))
            c = "" if chain.in_C is None else fmt(bool(chain.in_C[n]))
            row = [str(n), fmt(n * chain.h)] + [fmt(v) for v in chain.states[n]]
            row += [g, c, fmt(chain.flux_in_cum[n]), fmt(chain.flux_out_cum[n])]
            f.write(",".join(row) + "\n")


def write_trajectory_csv(traj, path):
    """Event table: one row per event with the full post-event state; row 0
    is the initial state (clock 0)."""
    N = traj.initial.size
    states = traj.all_states()
    cols = ["k", "t", "clock", "p", "bath_draw"] + [f"E_{i + 1}" for i in range(N)]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(cols) + "\n")
        f.write(",".join(["0", "0.0", "0", "", ""] + [fmt(v) for v in states[0]]) + "\n")
        for k in range(traj.n_events):
            x = traj.bath_draws[k]
            row = [str(k + 1), fmt(traj.times[k]), str(int(traj.clocks[k])), fmt(traj.ps[k]),
                   "" if np.isnan(x) else fmt(x)]
            f.write(",".join(row + [fmt(v) for v in states[k + 1]]) + "\n")


_MAGIC = b"NESSKMC\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIIQQQddddd")


def write_checkpoint(traj, path):
    """Binary record: little-endian header, initial state, then six doubles
    per event (t, clock, p, bath_draw, post_a, post_b)."""
    p = traj.params
    hdr = _HEADER.pack(_MAGIC, _VERSION, p.N, traj.n_events, traj.seed, traj.stream_id,
                       traj.t_end, p.T_L, p.T_R, p.K, p.h)
    body = np.empty((traj.n_events, 6), dtype="<f8")
    body[:, 0] = traj.times
    body[:, 1] = traj.clocks
    body[:, 2] = traj.ps
    body[:, 3] = traj.bath_draws
    body[:, 4:] = traj.post
    with open(path, "wb") as f:
        f.write(hdr)
        f.write(np.asarray(traj.initial, dtype="<f8").tobytes())
        f.write(body.tobytes())


def read_checkpoint(path, params=None):
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, N, n, seed, sid, t_end, TL, TR, Kc, h = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a trajectory checkpoint")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _HEADER.size
    init = np.frombuffer(raw, dtype="<f8", count=N, offset=off).astype(np.float64)
    body = np.frombuffer(raw, dtype="<f8", count=6 * n, offset=off + 8 * N).reshape(n, 6)
    if params is None:
        params = ModelParams(N=N, T_L=TL, T_R=TR, K=Kc, h=h, seed=seed)
    traj = Trajectory(initial=init, params=params, t_end=t_end, times=body[:, 0].copy(),
                      clocks=body[:, 1].astype(np.int64), ps=body[:, 2].copy(),
                      bath_draws=body[:, 3].copy(), post=body[:, 4:].copy(),
                      seed=seed, stream_id=sid)
    cps = [init.copy()]
    for k in range(CHECKPOINT_EVERY, n + 1, CHECKPOINT_EVERY):
        e = cps[-1].copy()
        for j in range(k - CHECKPOINT_EVERY, k):
            traj._write(e, j)
        cps.append(e)
    traj.checkpoints = cps
    return traj
