"""Initial laws and the chunked, schedule-independent ensemble runner.

Trajectory ``i`` of an ensemble owns stream ``stream_base + i``.  Work is cut
into fixed-size chunks whose boundaries do not depend on the worker count;
partial results are merged in chunk order, so every aggregate is identical
for any number of workers.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels as K_

__all__ = [
    "InitialLaw",
    "parse_law",
    "resolve_workers",
    "map_chunks",
    "EnsembleSummary",
    "FinalMean",
    "Histogram",
    "Snapshots",
    "run_ensemble",
    "stream_tag",
]

CHUNK = 2048


def stream_tag(tag):
    """Stream-id offset for the ``tag``-th ensemble of one experiment."""
    return int(tag) << 48


@dataclass(frozen=True)
class InitialLaw:
    spec: str
    code: int
    lp: np.ndarray

    def sample(self, N, seed, count, stream_base=0, by_stream=True):
        """The initial states the kernels would draw for trajectories 0..count-1."""
        out = np.empty((count, N))
        row = np.empty(N)
        for i in range(count):
            k0, k1, sub = K_.keys_for(i, seed, stream_base, by_stream)
            K_.sample_initial(self.code, self.lp, N, k0, k1, sub, row)
            out[i] = row
        return out


def parse_law(spec, params):
    """Parse ``point:E1,...,EN``, ``flat:lo,hi``, ``boundary:i,eps`` or ``exp:T``.

    ``boundary:i,eps`` draws site i from U(0, eps) and every other site from
    U(m/2, 3m/2) with m = (T_L + T_R)/2.
    """
    if isinstance(spec, InitialLaw):
        return spec
    try:
        kind, _, rest = spec.partition(":")
        vals = [float(v) for v in rest.split(",")] if rest else []
    except (AttributeError, ValueError):
        raise ValueError(f"malformed initial-law spec {spec!r}") from None
    kind = kind.strip().lower()
    N = params.N
    if kind == "point":
        if len(vals) != N or any(v < 0 for v in vals):
            raise ValueError(f"point law needs {N} non-negative energies")
        return InitialLaw(spec, K_.LAW_POINT, np.array(vals))
    if kind == "flat":
        if len(vals) != 2 or not 0 <= vals[0] <= vals[1]:
            raise ValueError("flat law needs 0 <= lo <= hi")
        return InitialLaw(spec, K_.LAW_FLAT, np.array(vals))
    if kind == "boundary":
        if len(vals) != 2 or int(vals[0]) != vals[0] or not 1 <= vals[0] <= N or not vals[1] > 0:
            raise ValueError(f"boundary law needs a site in 1..{N} and eps > 0")
        m = 0.5 * (params.T_L + params.T_R)
        return InitialLaw(spec, K_.LAW_BOUNDARY, np.array([vals[0], vals[1], 0.5 * m, 1.5 * m]))
    if kind == "exp":
        if len(vals) != 1 or not vals[0] > 0:
            raise ValueError("exp law needs a positive mean")
        return InitialLaw(spec, K_.LAW_EXP, np.array(vals))
    raise ValueError(f"unknown initial-law kind {kind!r}")


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get("NESS_KMC_WORKERS")
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def map_chunks(fn, count, workers=None, chunk=CHUNK):
    """Apply ``fn(start, stop)`` to fixed chunks of range(count); results in
    chunk order."""
    bounds = [(s, min(s + chunk, count)) for s in range(0, count, chunk)]
    workers = resolve_workers(workers)
    if workers == 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda ab: fn(*ab), bounds))


@dataclass
class EnsembleSummary:
    law: str
    count: int
    times: np.ndarray
    value: object
    n_events: int


class FinalMean:
    """Mean site energies and mean W at the last requested time."""

    def partial(self, states):
        last = states[:, -1, :]
        return np.concatenate((last.sum(axis=0), [last.sum()])), last.shape[0]

    def merge(self, a, b):
        return a[0] + b[0], a[1] + b[1]

    def finish(self, acc):
        s, n = acc
        return {"site_means": s[:-1] / n, "mean_W": s[-1] / n}


class Histogram:
    """Counts of one site's energy (or of W when ``site`` is None) on fixed
    ``edges`` at each requested time; values outside the edges are dropped."""

    def __init__(self, edges, site=None):
        self.edges = np.asarray(edges, dtype=float)
        self.site = site

    def partial(self, states):
        x = states.sum(axis=2) if self.site is None else states[:, :, self.site - 1]
        return np.stack([np.histogram(x[:, q], bins=self.edges)[0] for q in range(x.shape[1])])

    def merge(self, a, b):
        return a + b

    def finish(self, acc):
        return acc


class Snapshots:
    """Keeps every state: (count, n_times, N)."""

    def partial(self, states):
        return [states]

    def merge(self, a, b):
        return a + b

    def finish(self, acc):
        return np.concatenate(acc, axis=0)


def run_ensemble(law, params, t_end, count, reducer=None, times=None, workers=None,
                 stream_base=0, seed=None):
    """Run ``count`` independent trajectories and reduce their states.

    States are taken at ``times`` (default: just ``t_end``) and handed to the
    reducer chunk by chunk.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    law = parse_law(law, params)
    reducer = reducer or FinalMean()
    times = np.asarray([t_end] if times is None else times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be non-negative and increasing")
    seed = params.seed if seed is None else seed
    N = params.N

    def run(a, b):
        out = np.empty((b - a, times.size, N))
        ev = np.empty(b - a, dtype=np.int64)
        K_.snapshot_batch(a, b, law.code, law.lp, N, params.T_L, params.T_R, params.K, times,
                          seed, stream_base, True, out, ev)
        return reducer.partial(out), int(ev.sum())

    parts = map_chunks(run, count, workers)
    acc = parts[0][0]
    for p, _ in parts[1:]:
        acc = reducer.merge(acc, p)
    return EnsembleSummary(law.spec, count, times, reducer.finish(acc), sum(e for _, e in parts))
