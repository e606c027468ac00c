"""Brute-force references for tiny chains.

* a discretised generator on an energy grid (N = 1 or 2) and its stationary
  vector,
* one-jump expectations by exact p-integration plus Gauss-Laguerre over the
  bath draw,
* the closed-form survival of a slow clock.

Cell probabilities are computed exactly: for an interior exchange the set of
fractions p sending the pair into a given pair of cells is an interval, and
for a bath exchange P[p(c + X) <= y] = E[min(1, y/(c + X))] has a closed form
in the exponential integral.  The top cell absorbs all mass beyond e_max.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .engine import fmt
from .model import energy_state

__all__ = [
    "OracleError",
    "GridSpec",
    "GeneratorMatrix",
    "build_generator",
    "stationary_solve",
    "bath_cdf",
    "jump_cell_probabilities",
    "one_jump_expectation",
    "slow_clock_survival",
    "stationary_mean",
    "write_stationary_csv",
    "write_generator_csv",
]

N_NODES = 64


class OracleError(RuntimeError):
    """Numerical failure of an oracle computation."""


@dataclass(frozen=True)
class GridSpec:
    """Energy grid on [0, e_max] with the top cell extended to infinity.

    ``spacing`` is "quadratic" (edges e_max*(k/bins)^2: fine cells near the
    zero-energy face, where the clock rate is singular, and bounded widths
    elsewhere), "exp" (cells of equal mass under an exponential law of mean
    ``scale``, truncated at e_max) or "uniform".
    """

    e_max: float
    bins: int
    spacing: str = "quadratic"
    scale: float = 1.0

    def __post_init__(self):
        if self.bins < 16:
            raise ValueError("need at least 16 bins")
        if not self.e_max > 0 or not self.scale > 0:
            raise ValueError("e_max and scale must be positive")
        if self.spacing not in ("quadratic", "exp", "uniform"):
            raise ValueError("spacing must be 'quadratic', 'exp' or 'uniform'")

    @classmethod
    def default(cls, params, bins=512, spacing="quadratic"):
        T = max(params.T_L, params.T_R)
        return cls(20.0 * T, bins, spacing, 0.5 * (params.T_L + params.T_R))

    @property
    def edges(self):
        k = np.arange(self.bins + 1) / self.bins
        if self.spacing == "uniform":
            e = k * self.e_max
        elif self.spacing == "quadratic":
            e = k * k * self.e_max
        else:
            e = -self.scale * np.log1p(-k * -np.expm1(-self.e_max / self.scale))
        e[0], e[-1] = 0.0, self.e_max
        return e

    @property
    def centers(self):
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def refine(self, factor=2):
        return GridSpec(self.e_max, self.bins * factor, self.spacing, self.scale)


@dataclass
class GeneratorMatrix:
    Q: np.ndarray
    grid: GridSpec
    N: int
    meta: dict = field(default_factory=dict)


def _ex1(z):
    """e^z E1(z) for z > 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 300
    out[small] = np.exp(z[small]) * special.exp1(z[small])
    w = 1.0 / z[~small]
    out[~small] = w * (1 - w + 2 * w * w - 6 * w**3 + 24 * w**4)
    return out


def bath_cdf(y, c, T):
    """P[p (c + X) <= y] with p ~ U(0,1), X ~ Exp(mean T), for c >= 0."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y > 0
    yy = y[pos]
    m = np.maximum(yy, c)
    head = np.where(yy > c, -np.expm1(-(yy - c) / T), 0.0)
    out[pos] = head + (yy / T) * np.exp((c - m) / T) * _ex1(m / T)
    return np.clip(out, 0.0, 1.0)


def _bath_row(c, T, edges):
    """Cell probabilities of p (c + X); the top cell absorbs the rest."""
    F = bath_cdf(edges[1:-1], c, T)
    return np.diff(np.concatenate(([0.0], F, [1.0])))


def _interior_matrix(S, edges):
    """P[(pS, (1-p)S) in cell (i, j)] for a pair with total S (top cells
    open-ended)."""
    lo = edges[:-1].copy()
    hi = edges[1:].copy()
    hi[-1] = np.inf
    a_lo, a_hi = np.clip(lo / S, 0, 1), np.clip(hi / S, 0, 1)
    b_lo, b_hi = np.clip(1 - hi / S, 0, 1), np.clip(1 - lo / S, 0, 1)
    return np.clip(np.minimum(a_hi[:, None], b_hi[None, :]) - np.maximum(a_lo[:, None], b_lo[None, :]), 0, None)


def _rate(a, b, K):
    return min(K, math.sqrt(max(min(a, b), 0.0)))


def jump_cell_probabilities(state, params, grid):
    """Per-clock rates and post-jump cell laws from ``state`` (N = 1 or 2).

    Returns a list of (rate, probabilities) with probabilities shaped
    (bins,) for N = 1 and (bins, bins) for N = 2.
    """
    e = energy_state(state, params.N)
    edges = grid.edges
    out = []
    if params.N == 1:
        for T in (params.T_L, params.T_R):
            out.append((_rate(T, e[0], params.K), _bath_row(e[0], T, edges)))
        return out
    if params.N != 2:
        raise ValueError("jump_cell_probabilities supports N = 1 or 2")
    cell = np.searchsorted(edges, e, side="right") - 1
    cell = np.clip(cell, 0, grid.bins - 1)
    left = np.zeros((grid.bins, grid.bins))
    left[:, cell[1]] = _bath_row(e[0], params.T_L, edges)
    right = np.zeros((grid.bins, grid.bins))
    right[cell[0], :] = _bath_row(e[1], params.T_R, edges)
    S = e[0] + e[1]
    if S > 0:
        mid = _interior_matrix(S, edges)
    else:
        mid = np.zeros((grid.bins, grid.bins))
        mid[0, 0] = 1.0
    out.append((_rate(params.T_L, e[0], params.K), left))
    out.append((_rate(e[0], e[1], params.K), mid))
    out.append((_rate(e[1], params.T_R, params.K), right))
    return out


def build_generator(params, grid):
    """Dense generator on grid cells (N = 1) or cell pairs (N = 2).

    The rate out of a cell is evaluated at its centre; the diagonal is set
    last so that every row sums to zero.
    """
    if params.N not in (1, 2):
        raise ValueError(f"the generator oracle supports N <= 2, got N={params.N}")
    c = grid.centers
    nb = grid.bins
    if params.N == 1:
        Q = np.zeros((nb, nb))
        for a in range(nb):
            for r, prob in jump_cell_probabilities([c[a]], params, grid):
                Q[a] += r * prob
    else:
        Q = np.zeros((nb * nb, nb * nb))
        for a in range(nb):
            for b in range(nb):
                row = Q[a * nb + b]
                for r, prob in jump_cell_probabilities([c[a], c[b]], params, grid):
                    row += r * prob.ravel()
    np.fill_diagonal(Q, 0.0)
    Q[np.diag_indices_from(Q)] = -Q.sum(axis=1)
    meta = {"T_L": params.T_L, "T_R": params.T_R, "K": params.K, "N": params.N}
    return GeneratorMatrix(Q, grid, params.N, meta)


def stationary_solve(gen, tol=1e-8):
    """Solve pi Q = 0 with sum(pi) = 1 by replacing one equation with the
    normalisation; raises OracleError for a reducible (singular) chain."""
    Q = gen.Q if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
    n = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise OracleError(f"generator is singular beyond normalisation: {exc}") from None
    scale = max(1.0, np.abs(Q).max())
    if not np.all(np.isfinite(pi)) or np.abs(pi @ Q).max() > tol * scale or pi.min() < -1e-12:
        raise OracleError("no valid stationary vector (chain reducible or ill-conditioned)")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_mean(pi, grid, N=1):
    """Mean energy of each site under a gridded law (cell centres)."""
    c = grid.centers
    if N == 1:
        return np.array([float(pi @ c)])
    P = pi.reshape(grid.bins, grid.bins)
    return np.array([float(P.sum(axis=1) @ c), float(P.sum(axis=0) @ c)])


def _gauss():
    xl, wl = np.polynomial.legendre.leggauss(N_NODES)
    xg, wg = special.roots_laguerre(N_NODES)
    return 0.5 * (xl + 1), 0.5 * wl, xg, wg


def _power_mean(a, b, beta):
    """E[(a + b p)^beta] for p ~ U(0,1), a >= 0, b >= 0."""
    if b <= 0:
        return a**beta if a > 0 else math.inf
    return ((a + b) ** (beta + 1) - a ** (beta + 1)) / ((beta + 1) * b)


def _v_expectation(e, j, params, seq, xg, wg):
    """E[V(post) | clock j] for 0-based clock j: each block sum is affine in p."""
    N = e.size
    expo = seq.exponents
    lo = j - 1 if j > 0 else None
    hi = j if j < N else None
    total = 0.0
    for k in range(N):
        for n in range(N - k):
            sites = range(k, k + n + 1)
            beta = expo[n]
            has_lo = lo is not None and lo in sites
            has_hi = hi is not None and hi in sites
            rest = sum(e[s] for s in sites if s != lo and s != hi)
            if lo is not None and hi is not None:
                S = e[lo] + e[hi]
                if has_lo and has_hi:
                    total += (rest + S) ** beta
                elif has_lo or has_hi:
                    total += _power_mean(rest, S, beta)
                else:
                    total += rest**beta
            else:
                site = hi if lo is None else lo
                T = params.T_L if lo is None else params.T_R
                if site in sites:
                    vals = [_power_mean(rest, e[site] + T * x, beta) for x in xg]
                    total += float(np.dot(wg, vals))
                else:
                    total += rest**beta
    return total


def one_jump_expectation(state, params, seq, f):
    """E[f(state after one jump)] - f(state).

    ``f`` is "W", "V" or a callable mapping an (m, N) array of post-states
    to m values; callables are integrated by Gauss-Legendre over p and
    Gauss-Laguerre over the bath draw (64 nodes each).
    """
    e = energy_state(state, params.N)
    N = e.size
    rates = np.array([_rate(params.T_L if i == 0 else e[i - 1], params.T_R if i == N else e[i], params.K)
                      for i in range(N + 1)])
    R = rates.sum()
    if R <= 0:
        raise OracleError("frozen state: every clock has rate 0")
    xp, wp, xg, wg = _gauss()
    if isinstance(f, str) and f == "W":
        d = rates[0] * (0.5 * (e[0] + params.T_L) - e[0]) + rates[N] * (0.5 * (e[-1] + params.T_R) - e[-1])
        return float(d / R)
    if isinstance(f, str) and f == "V":
        from .lyapunov import v_total

        acc = sum(rates[j] * _v_expectation(e, j, params, seq, xg, wg) for j in range(N + 1) if rates[j] > 0)
        return float(acc / R - v_total(e, seq).value)
    if not callable(f):
        raise ValueError("f must be 'W', 'V' or a callable")
    base = float(np.asarray(f(e[None, :]))[0])
    acc = 0.0
    for j in range(N + 1):
        if rates[j] <= 0:
            continue
        if j == 0 or j == N:
            site = 0 if j == 0 else N - 1
            T = params.T_L if j == 0 else params.T_R
            P, X = np.meshgrid(xp, T * xg, indexing="ij")
            W = np.outer(wp, wg)
            post = np.repeat(e[None, :], P.size, axis=0)
            post[:, site] = (P * (e[site] + X)).ravel()
        else:
            S = e[j - 1] + e[j]
            post = np.repeat(e[None, :], xp.size, axis=0)
            post[:, j - 1] = xp * S
            post[:, j] = (1 - xp) * S
            W = wp
        acc += rates[j] * float(np.dot(np.ravel(W), np.asarray(f(post), dtype=float)))
    return acc / R - base


def slow_clock_survival(epsilon, t, n_neighbors=2):
    """P[no ring of the n adjacent clocks by t] when the slow site is
    U(0, epsilon) and each adjacent clock rings at rate sqrt(E):
    (2/(c^2 t^2 eps)) (1 - e^{-x}(1 + x)), x = c sqrt(eps) t."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if n_neighbors not in (1, 2):
        raise ValueError("n_neighbors must be 1 or 2")
    t = np.asarray(t, dtype=float)
    x = n_neighbors * math.sqrt(epsilon) * t
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    big = 2.0 / xs**2 * (-np.expm1(-xs) - xs * np.exp(-xs))
    series = 1.0 - 2.0 * x / 3.0 + x * x / 4.0
    out = np.where(small, series, big)
    return float(out) if out.ndim == 0 else out


def _header(f, gen_or_grid, extra):
    grid = gen_or_grid.grid if isinstance(gen_or_grid, GeneratorMatrix) else gen_or_grid
    f.write(f"# grid spacing={grid.spacing} bins={grid.bins} e_max={fmt(grid.e_max)} scale={fmt(grid.scale)}\n")
    for k, v in sorted(extra.items()):
        f.write(f"# {k}={fmt(v)}\n")


def write_stationary_csv(path, pi, grid, N=1, meta=None):
    e = grid.edges
    c = grid.centers
    with open(path, "w", newline="") as f:
        _header(f, grid, meta or {})
        if N == 1:
            f.write("cell,lo,hi,center,pi\n")
            for a in range(grid.bins):
                f.write(",".join(fmt(v) for v in (a, e[a], e[a + 1], c[a], pi[a])) + "\n")
        else:
            f.write("cell_1,cell_2,center_1,center_2,pi\n")
            for a in range(grid.bins):
                for b in range(grid.bins):
                    f.write(",".join(fmt(v) for v in (a, b, c[a], c[b], pi[a * grid.bins + b])) + "\n")


def write_generator_csv(path, gen):
    with open(path, "w", newline="") as f:
        _header(f, gen, gen.meta)
        for row in gen.Q:
            f.write(",".join(fmt(v) for v in row) + "\n")
