"""Hitting-time ensembles, survival curves, tail fits, TV decay and flux rates."""
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import kernels as K_
from .ensemble import map_chunks, parse_law, stream_tag
from .lyapunov import exponent_seq
from .engine import fmt

__all__ = [
    "SurvivalCurve",
    "InducedChainRecord",
    "FluxLedger",
    "HittingEnsemble",
    "FluxEnsemble",
    "FluxRates",
    "TailFit",
    "MixingPoint",
    "run_hitting",
    "run_flux",
    "first_ring_times",
    "extract_induced_chain",
    "collect_hitting_tail",
    "default_thresholds",
    "fit_tail_exponent",
    "fit_geometric_tail",
    "fit_mixing_slope",
    "empirical_tv",
    "mixing_curve",
    "flux_rates",
    "autocorrelation",
    "wilson_interval",
    "write_survival_csv",
    "write_fit_json",
]

BIG = np.iinfo(np.int64).max // 4


def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for k successes out of n (vectorised)."""
    k = np.asarray(k, dtype=float)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return np.clip(mid - half, 0, 1), np.clip(mid + half, 0, 1)


def default_thresholds(t_max, dense_upto=100_000, per_decade=200):
    """Every integer 1..t_max when t_max is small, else all integers up to
    1000 followed by a log-spaced integer grid."""
    t_max = int(t_max)
    if t_max <= dense_upto:
        return np.arange(1, t_max + 1, dtype=np.int64)
    head = np.arange(1, 1001, dtype=np.int64)
    tail = np.logspace(3, math.log10(t_max), int(per_decade * (math.log10(t_max) - 3)) + 2)
    return np.unique(np.concatenate((head, tail.astype(np.int64), [t_max])))


@dataclass
class SurvivalCurve:
    """Empirical P[Z > threshold] with right-censoring at ``t_max``.

    ``censored`` trajectories are counted as exceeding every threshold.
    """

    thresholds: np.ndarray
    counts_exceeding: np.ndarray
    total: int
    t_max: Optional[int] = None
    censored: int = 0
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds)
        self.counts_exceeding = np.asarray(self.counts_exceeding, dtype=np.int64)
        if self.thresholds.shape != self.counts_exceeding.shape or self.thresholds.ndim != 1:
            raise ValueError("thresholds and counts must be 1-d and of equal length")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(self.counts_exceeding < 0) or np.any(np.diff(self.counts_exceeding) > 0):
            raise ValueError("counts must be non-negative and non-increasing")
        if self.total < 1 or (self.counts_exceeding.size and self.counts_exceeding[0] > self.total):
            raise ValueError("counts exceed total")
        if self.t_max is None:
            self.t_max = int(self.thresholds[-1]) if self.thresholds.size else 0

    @classmethod
    def from_samples(cls, values, t_max, thresholds=None):
        """Curve from hit values (negative = censored beyond ``t_max``)."""
        values = np.asarray(values, dtype=np.int64)
        thr = default_thresholds(t_max) if thresholds is None else np.asarray(thresholds)
        hit = np.sort(values[(values >= 0) & (values <= t_max)])
        censored = values.size - hit.size
        counts = values.size - np.searchsorted(hit, thr, side="right")
        return cls(thr, counts, values.size, int(t_max), int(censored), values)

    @property
    def survival(self):
        return self.counts_exceeding / self.total

    @property
    def censored_fraction(self):
        return self.censored / self.total

    def ci(self):
        return wilson_interval(self.counts_exceeding, self.total)

    def fit_cap(self, min_tail=10):
        """Largest threshold still below the ``min_tail``-th largest
        uncensored value (None if there is no such threshold)."""
        ok = self.counts_exceeding - self.censored >= min_tail
        return self.thresholds[ok][-1] if ok.any() else None


@dataclass
class InducedChainRecord:
    """Visits of a time-h chain to G.

    ``return_times[j]`` is the grid index of the induced state with index
    ``first_index + j``; ``first_index`` is 0 when the chain starts in G.
    ``tau_C`` is the first induced index n >= 1 whose state is in C.
    """

    return_times: np.ndarray
    states_at_return: np.ndarray
    first_index: int
    tau_C: Optional[int]

    @property
    def tau_C_step(self):
        """Grid index of the induced visit ``tau_C``."""
        if self.tau_C is None:
            return None
        return int(self.return_times[self.tau_C - self.first_index])


@dataclass
class FluxLedger:
    flux_in: float
    flux_out: float
    contributions: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.flux_in >= 0 and self.flux_out >= 0):
            raise ValueError("fluxes must be non-negative")

    @classmethod
    def from_chain(cls, chain):
        return cls(float(chain.flux_in_cum[-1]), float(chain.flux_out_cum[-1]),
                   np.diff(chain.flux_in_cum - chain.flux_out_cum))


def extract_induced_chain(chain):
    """Induced record of a SampleChain carrying in_G / in_C flags."""
    if chain.in_G is None or chain.in_C is None:
        raise ValueError("chain has no classification flags")
    g = np.asarray(chain.in_G, dtype=bool)
    c = np.asarray(chain.in_C, dtype=bool)
    first = 0 if g[0] else 1
    times = np.flatnonzero(g)
    if first == 0:
        hits = np.flatnonzero(c[times[1:]])
        tau = int(hits[0]) + 1 if hits.size else None
    else:
        hits = np.flatnonzero(c[times])
        tau = int(hits[0]) + 1 if hits.size else None
    return InducedChainRecord(times, chain.states[times], first, tau)


@dataclass
class HittingEnsemble:
    """Per-trajectory first-passage indices (-1 = censored)."""

    law: str
    target: str
    induced: bool
    values: np.ndarray
    t_max: int
    n_events: int


def run_hitting(law, params, count, t_max, target="C", induced=False, workers=None,
                stream_base=0):
    """First-passage indices of ``count`` trajectories.

    target "C" gives tau_C on the grid (or the induced index when
    ``induced``); target "G" gives the first grid index n >= 1 in G.
    Runs are censored at index ``t_max``.
    """
    if not params.calibrated:
        raise ValueError("thresholds M0, M1 are not set")
    if target not in ("C", "G"):
        raise ValueError("target must be 'C' or 'G'")
    if target == "G" and induced:
        raise ValueError("the induced chain lives in G; use target 'C'")
    law = parse_law(law, params)
    seq = exponent_seq(params.N, params.eta)
    N = params.N
    n_grid = BIG if induced else int(t_max)
    n_ind = int(t_max) + 1 if induced else BIG

    def run(a, b):
        out = np.empty(b - a, dtype=np.int64)
        ev = np.empty(b - a, dtype=np.int64)
        if target == "C":
            other = np.empty(b - a, dtype=np.int64)
            K_.hitting_batch(a, b, law.code, law.lp, N, params.T_L, params.T_R, params.K, params.h,
                             seq.exponents, params.M0, params.M1, params.seed, stream_base, True,
                             n_grid, n_ind, other, out, ev)
            if not induced:
                out = other
        else:
            w = np.empty(b - a)
            K_.return_to_g_batch(a, b, law.code, law.lp, N, params.T_L, params.T_R, params.K,
                                 params.h, seq.exponents, params.M0, params.seed, stream_base,
                                 True, n_grid, w, out)
            ev[:] = 0
        return out, int(ev.sum())

    parts = map_chunks(run, count, workers)
    values = np.concatenate([p[0] for p in parts])
    values[values > t_max] = -1
    return HittingEnsemble(law.spec, target, induced, values, int(t_max), sum(p[1] for p in parts))


def first_ring_times(law, params, count, clocks, t_max, workers=None, stream_base=0):
    """Continuous time of the first ring of any clock in ``clocks`` (1-based);
    inf when none rings before ``t_max``."""
    law = parse_law(law, params)
    mask = np.zeros(params.N + 1, dtype=np.bool_)
    for c in clocks:
        if not 1 <= c <= params.N + 1:
            raise ValueError(f"clock {c} out of range 1..{params.N + 1}")
        mask[c - 1] = True

    def run(a, b):
        out = np.empty(b - a)
        K_.first_ring_batch(a, b, law.code, law.lp, params.N, params.T_L, params.T_R, params.K,
                            mask, float(t_max), params.seed, stream_base, True, out)
        return out

    return np.concatenate(map_chunks(run, count, workers))


def collect_hitting_tail(ensemble, target="C", t_max=None, thresholds=None):
    if target != ensemble.target:
        raise ValueError(f"ensemble was run for target {ensemble.target!r}")
    t_max = ensemble.t_max if t_max is None else int(t_max)
    values = ensemble.values.copy()
    values[values > t_max] = -1
    return SurvivalCurve.from_samples(values, t_max, thresholds)


class TailFit(NamedTuple):
    exponent: float
    ci_low: float
    ci_high: float
    r2: float
    window: tuple
    n_points: int
    poor_fit: bool
    n_samples: int
    censored_fraction: float


def _resolve_window(curve, window, default):
    cap = curve.fit_cap()
    if cap is None:
        raise ValueError("curve has fewer than 10 uncensored values")
    s = curve.survival
    if window is None:
        lo, hi = default
    elif isinstance(window, str):
        kind, _, arg = window.partition(":")
        if kind != "drop":
            raise ValueError(f"unknown window rule {window!r}")
        frac = float(arg or 0.1)
        below = np.flatnonzero(s <= frac * s[0])
        if not below.size:
            raise ValueError("survival never drops far enough to start the window")
        lo, hi = curve.thresholds[below[0]], math.inf
    else:
        lo, hi = window
    return float(lo), float(min(hi, cap))


def _pick(curve, lo, hi, log_axis, per_decade=20, max_points=200):
    thr = curve.thresholds
    idx = np.flatnonzero((thr >= lo) & (thr <= hi) & (curve.counts_exceeding > 0))
    if idx.size == 0:
        raise ValueError("empty fit window")
    if log_axis:
        grid = np.logspace(math.log10(max(thr[idx[0]], 1e-300)), math.log10(thr[idx[-1]]),
                           max(2, int(per_decade * math.log10(thr[idx[-1]] / thr[idx[0]])) + 1))
    else:
        grid = np.linspace(thr[idx[0]], thr[idx[-1]], max_points)
    pos = np.clip(np.searchsorted(thr[idx], grid), 0, idx.size - 1)
    idx = np.unique(idx[pos])
    if idx.size < 10:
        raise ValueError(f"only {idx.size} usable thresholds in the fit window (need 10)")
    return idx


def _gls(x, counts, total):
    """Least squares for y = log(counts/total) under the binomial covariance
    of an empirical survival curve.

    Cov(log S_i, log S_j) = v_min(i,j) with v_i = (1 - S_i)/(total*S_i), a
    random-walk structure, so GLS reduces to weighted least squares on the
    first point plus successive increments.  Counts must be strictly
    decreasing and below ``total``.  Returns (slope, intercept, r2).
    """
    s = counts / total
    y = np.log(s)
    v = (1.0 - s) / (total * s)
    dv = np.diff(v, prepend=0.0)
    w = 1.0 / dv
    a = np.concatenate(([1.0], np.zeros(x.size - 1)))
    b = np.diff(x, prepend=0.0)
    z = np.diff(y, prepend=0.0)
    A = np.array([[np.sum(w * a * a), np.sum(w * a * b)], [np.sum(w * a * b), np.sum(w * b * b)]])
    rhs = np.array([np.sum(w * a * z), np.sum(w * b * z)])
    icpt, slope = np.linalg.solve(A, rhs)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - icpt - slope * x) ** 2) / ss if ss > 0 else 0.0
    return slope, icpt, r2


def _usable(counts, total):
    """Mask of points with 0 < count < total and a count strictly below the
    previous kept point (equal counts carry no extra information)."""
    keep = (counts > 0) & (counts < total)
    keep &= np.concatenate(([True], np.diff(counts) != 0))
    return keep


def _bootstrap_counts(counts, total, n_boot, rng):
    """Multinomial resamples of the exceedance counts at fixed thresholds."""
    cells = np.concatenate(([total - counts[0]], -np.diff(counts), [counts[-1]]))
    draws = rng.multinomial(int(total), cells / total, size=n_boot)
    return draws[:, ::-1].cumsum(axis=1)[:, ::-1][:, 1:]


def _fit(curve, idx, x, n_boot, seed, r2_min, window):
    counts = curve.counts_exceeding[idx]
    if counts[0] == counts[-1]:
        raise ValueError("no decay in the fit window")
    keep = _usable(counts, curve.total)
    if keep.sum() < 3:
        raise ValueError("too few distinct survival levels in the fit window")
    slope, _, r2 = _gls(x[keep], counts[keep], curve.total)
    rng = np.random.default_rng(seed)
    boots = []
    for c in _bootstrap_counts(counts, curve.total, n_boot, rng):
        ok = _usable(c, curve.total)
        if ok.sum() >= 3:
            boots.append(_gls(x[ok], c[ok], curve.total)[0])
    lo, hi = np.percentile(boots, [2.5, 97.5]) if boots else (slope, slope)
    lo, hi = min(lo, slope), max(hi, slope)
    return TailFit(float(slope), float(lo), float(hi), float(r2), window, int(keep.sum()),
                   bool(r2 < r2_min), int(curve.total), float(curve.censored_fraction))


def fit_tail_exponent(curve, window=None, n_boot=1000, seed=0, r2_min=0.98, lattice=None):
    """Power-law fit: least-squares slope of log P[Z > n] against log n.

    ``window`` is (lo, hi), "drop:f" (start where survival first falls to f
    times its first value) or None for [t_max^0.3, t_max^0.8].  The upper end
    is always capped below the 10th-largest uncensored value.  The slope is
    the generalised least-squares estimate under the binomial covariance of
    the curve; the CI is a multinomial bootstrap.  For integer
    thresholds (``lattice``) the abscissa is log(n + 1), the smallest value
    of Z counted as exceeding n.
    """
    if curve.counts_exceeding.size and curve.counts_exceeding[-1] == curve.total:
        raise ValueError("curve is fully censored")
    t = curve.t_max
    lo, hi = _resolve_window(curve, window, (t**0.3, t**0.8))
    idx = _pick(curve, max(lo, 1e-300), hi, True)
    if lattice is None:
        lattice = np.issubdtype(curve.thresholds.dtype, np.integer)
    x = np.log(curve.thresholds[idx] + (1.0 if lattice else 0.0))
    return _fit(curve, idx, x, n_boot, seed, r2_min, (lo, hi))


def fit_geometric_tail(curve, window=None, n_boot=1000, seed=0, r2_min=0.98):
    """Geometric fit: rate c = -slope of log P[Z > n] against n.

    Returns a TailFit whose ``exponent`` is the rate c and whose CI is on c.
    Default window: [first threshold >= 1, 10th-largest uncensored value).
    """
    if curve.counts_exceeding.size and curve.counts_exceeding[-1] == curve.total:
        raise ValueError("curve is fully censored")
    lo, hi = _resolve_window(curve, window, (1, math.inf))
    idx = _pick(curve, lo, hi, False)
    f = _fit(curve, idx, curve.thresholds[idx].astype(float), n_boot, seed, r2_min, (lo, hi))
    return f._replace(exponent=-f.exponent, ci_low=-f.ci_high, ci_high=-f.ci_low)


def empirical_tv(hist_a, hist_b):
    """Half the L1 distance between two normalised histograms."""
    ea, eb = getattr(hist_a, "edges", None), getattr(hist_b, "edges", None)
    if ea is not None and eb is not None and not np.array_equal(ea, eb):
        raise ValueError("histograms use different bin edges")
    a = np.asarray(getattr(hist_a, "counts", hist_a), dtype=float)
    b = np.asarray(getattr(hist_b, "counts", hist_b), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"bin mismatch: {a.shape} vs {b.shape}")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0 or np.any(a < 0) or np.any(b < 0):
        raise ValueError("histograms must be non-negative with positive mass")
    return float(min(1.0, 0.5 * np.abs(a / sa - b / sb).sum()))


class MixingPoint(NamedTuple):
    t: float
    tv: float
    ci_low: float
    ci_high: float
    floor: float
    corrected: float


def _codes(x, edges, bins):
    """Joint cell code of each row given per-coordinate inner edges."""
    code = np.zeros(x.shape[0], dtype=np.int64)
    for k in range(x.shape[1]):
        code = code * bins + np.searchsorted(edges[k], x[:, k], side="right")
    return code


def _binned(x, y, z, bins, mode):
    pooled = np.concatenate((x, y))
    q = np.linspace(0, 1, bins + 1)[1:-1]
    edges = [np.unique(np.quantile(pooled[:, k], q)) for k in range(pooled.shape[1])]
    if mode == "joint":
        n = bins ** x.shape[1]
        return [[np.bincount(_codes(s, edges, bins), minlength=n) for s in (x, y, z)]]
    return [[np.bincount(np.searchsorted(edges[k], s[:, k], side="right"), minlength=bins)
             for s in (x, y, z)] for k in range(x.shape[1])]


def mixing_curve(params, law_mu, law_nu, times, count, bins=8, mode="joint", n_boot=200,
                 workers=None, seed=None):
    """Cross-law TV at each time, with a same-law bias floor.

    Three ensembles are run: mu, nu and an independent copy of nu.  At each
    time the coordinates are cut at the pooled (mu, nu) quantiles into
    ``bins`` equiprobable cells; ``mode`` "joint" compares the joint cell
    histograms, "marginal" reports the largest single-site TV.  The floor is
    the TV between nu and its copy; ``corrected`` removes it in quadrature.
    """
    from .ensemble import Snapshots, run_ensemble

    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if mode not in ("joint", "marginal"):
        raise ValueError("mode must be 'joint' or 'marginal'")
    ens = [run_ensemble(law, params, times[-1], count, Snapshots(), times, workers,
                        stream_base=stream_tag(tag), seed=seed).value
           for tag, law in ((1, law_mu), (2, law_nu), (3, law_nu))]
    rng = np.random.default_rng(0 if seed is None else seed)
    out = []
    for q, t in enumerate(times):
        groups = _binned(ens[0][:, q], ens[1][:, q], ens[2][:, q], bins, mode)
        tv = max(empirical_tv(a, b) for a, b, _ in groups)
        floor = max(empirical_tv(b, c) for _, b, c in groups)
        boots = np.empty(n_boot)
        for r in range(n_boot):
            boots[r] = max(empirical_tv(rng.multinomial(count, a / count),
                                        rng.multinomial(count, b / count)) for a, b, _ in groups)
        lo, hi = np.percentile(boots, [2.5, 97.5])
        out.append(MixingPoint(float(t), tv, float(min(lo, tv)), float(max(hi, tv)), floor,
                               math.sqrt(max(tv * tv - floor * floor, 0.0))))
    return out


def fit_mixing_slope(points, floor_factor=3.0, use="tv"):
    """Log-log OLS slope of TV against t over points with TV > factor * floor.

    Returns (slope, stderr, n_points); slope is NaN with fewer than 3 points.
    """
    pts = [p for p in points if p.t > 0 and p.tv > floor_factor * p.floor]
    if len(pts) < 3:
        return float("nan"), float("nan"), len(pts)
    x = np.log([p.t for p in pts])
    y = np.log([getattr(p, use) for p in pts])
    (slope, icpt), cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - (slope * x + icpt)
    s2 = np.sum(resid**2) / max(len(pts) - 2, 1)
    return float(slope), float(math.sqrt(cov[0, 0] * s2)), len(pts)


@dataclass
class FluxEnsemble:
    """Per-trajectory fluxes over [burn_in, t_end) and time integrals of E.

    ``w_start``/``w_end`` are W at times 0 and t_end; ``flux_in_all`` and
    ``flux_out_all`` cover the whole run [0, t_end), so
    w_end - w_start == flux_in_all - flux_out_all.
    """

    law: str
    burn_in: float
    t_end: float
    flux_in: np.ndarray
    flux_out: np.ndarray
    integral: np.ndarray
    integral_sq: np.ndarray
    w_start: np.ndarray
    w_end: np.ndarray
    n_events: int = 0
    flux_in_all: Optional[np.ndarray] = None
    flux_out_all: Optional[np.ndarray] = None


def run_flux(law, params, t_end, count, burn_in=0.0, workers=None, stream_base=0):
    if not 0 <= burn_in < t_end:
        raise ValueError("need 0 <= burn_in < t_end")
    law = parse_law(law, params)
    N = params.N

    def run(a, b):
        i1 = np.empty((b - a, N))
        i2 = np.empty((b - a, N))
        fl = np.empty((b - a, 6))
        ev = np.empty(b - a, dtype=np.int64)
        K_.profile_batch(a, b, law.code, law.lp, N, params.T_L, params.T_R, params.K,
                         burn_in, t_end, params.seed, stream_base, True, i1, i2, fl, ev)
        return i1, i2, fl, int(ev.sum())

    parts = map_chunks(run, count, workers)
    i1 = np.concatenate([p[0] for p in parts])
    i2 = np.concatenate([p[1] for p in parts])
    fl = np.concatenate([p[2] for p in parts])
    return FluxEnsemble(law.spec, float(burn_in), float(t_end), fl[:, 4], fl[:, 5], i1, i2,
                        fl[:, 2], fl[:, 3], sum(p[3] for p in parts), fl[:, 0], fl[:, 1])


class FluxRates(NamedTuple):
    inflow: float
    inflow_se: float
    outflow: float
    outflow_se: float


def flux_rates(ensemble, t_end=None):
    """Per-unit-time inflow and outflow over the ensemble window."""
    dur = (ensemble.t_end if t_end is None else t_end) - ensemble.burn_in
    n = ensemble.flux_in.size
    fi, fo = ensemble.flux_in / dur, ensemble.flux_out / dur
    se = (lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"))
    return FluxRates(float(fi.mean()), se(fi), float(fo.mean()), se(fo))


def autocorrelation(series, lags, n_batches=20):
    """Normalised autocovariance with batched-means 95% CI.

    Returns rows (lag, acf, ci_low, ci_high).
    """
    x = np.asarray(series, dtype=float)
    lags = np.asarray(lags, dtype=int)
    if lags.size == 0 or lags.min() < 0:
        raise ValueError("lags must be non-negative")
    if x.size <= lags.max() * 2 or x.size // n_batches <= lags.max():
        raise ValueError("series too short for the requested lags")
    if np.ptp(x) == 0:
        raise ValueError("constant series: autocorrelation undefined")

    def acf(v):
        v = v - v.mean()
        n = v.size
        f = np.fft.rfft(v, 2 ** int(math.ceil(math.log2(2 * n))))
        c = np.fft.irfft(f * np.conj(f))[: lags.max() + 1] / n
        return c[lags] / c[0] if c[0] > 0 else np.full(lags.size, np.nan)

    full = acf(x)
    m = x.size // n_batches
    per = np.array([acf(x[b * m:(b + 1) * m]) for b in range(n_batches)])
    se = np.nanstd(per, axis=0, ddof=1) / math.sqrt(n_batches)
    z = 1.959963984540054
    return [(int(l), float(a), float(a - z * s), float(a + z * s)) for l, a, s in zip(lags, full, se)]


def write_survival_csv(path, curve):
    lo, hi = curve.ci()
    s = curve.survival
    with open(path, "w", newline="") as f:
        f.write("threshold,survivors,total,survival,ci_low,ci_high\n")
        for k in range(curve.thresholds.size):
            f.write(",".join(fmt(v) for v in (curve.thresholds[k], curve.counts_exceeding[k],
                                               curve.total, s[k], lo[k], hi[k])) + "\n")


def write_fit_json(path, fit, extra=None):
    doc = {
        "exponent": fit.exponent,
        "ci": [fit.ci_low, fit.ci_high],
        "window": list(fit.window),
        "r2": fit.r2,
        "n_samples": fit.n_samples,
        "censored_fraction": fit.censored_fraction,
        "n_points": fit.n_points,
        "poor_fit": fit.poor_fit,
    }
    doc.update(extra or {})
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
