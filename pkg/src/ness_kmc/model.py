"""Elementary dynamics of the energy exchange chain.

Sites are numbered 1..N; the baths act as virtual sites 0 (temperature T_L)
and N+1 (temperature T_R).  Clock ``i`` (1..N+1) sits between site i-1 and
site i, so clocks 1 and N+1 are the bath clocks.  States are plain float64
arrays of length N.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "ModelParams",
    "Event",
    "energy_state",
    "rate",
    "exchange_pair",
    "bath_exchange",
    "clock_rates",
    "default_h",
]

# total-rate smallness: 1 - exp(-x) > x/2 holds for x below this
H_RATE_LIMIT = 1.59


def default_h(N, K):
    return 1.0 / ((N + 1) * K)


@dataclass(frozen=True)
class ModelParams:
    """Everything needed to reproduce a run.

    ``h`` defaults to 1/((N+1)K).  ``M0``/``M1`` are the bad-set and
    reference-set thresholds; ``None`` means "not yet calibrated" (see
    :func:`ness_kmc.lyapunov.calibrate_thresholds`).
    """

    N: int
    T_L: float = 1.0
    T_R: float = 2.0
    K: float = 10.0
    eta: float = 0.05
    h: Optional[float] = None
    M0: Optional[float] = None
    M1: Optional[float] = None
    seed: int = 0
    e_min: float = 1e-12

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not (self.T_L > 0 and self.T_R > 0):
            raise ValueError("bath temperatures must be positive")
        if not self.K >= 4 * max(self.T_L, self.T_R):
            raise ValueError(f"rate cap K={self.K} must be >= 4*max(T_L, T_R)")
        if not 0 < self.eta < 0.25:
            raise ValueError(f"eta must lie in (0, 1/4), got {self.eta}")
        if self.h is None:
            object.__setattr__(self, "h", default_h(self.N, self.K))
        if not self.h > 0 or self.h * (self.N + 1) * self.K >= H_RATE_LIMIT:
            raise ValueError(f"h={self.h} violates 0 < h*(N+1)*K < {H_RATE_LIMIT}")
        for name in ("M0", "M1"):
            v = getattr(self, name)
            if v is not None and not v > 1:
                raise ValueError(f"{name} must exceed 1, got {v}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.e_min < 0:
            raise ValueError("e_min must be non-negative")

    @property
    def n_clocks(self):
        return self.N + 1

    @property
    def calibrated(self):
        return self.M0 is not None and self.M1 is not None

    def with_thresholds(self, M0, M1):
        return replace(self, M0=float(M0), M1=float(M1))

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Event:
    """One clock ring.  ``clock`` is 1-based; ``bath_draw`` is set only for
    the bath clocks 1 and N+1."""

    clock: int
    time: float
    p: float
    bath_draw: Optional[float] = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"exchange fraction must lie in (0, 1), got {self.p}")
        if self.time < 0:
            raise ValueError("event time must be non-negative")
        if self.bath_draw is not None and self.bath_draw < 0:
            raise ValueError("bath draw must be non-negative")


def energy_state(values, N=None):
    """Validate and copy ``values`` into a float64 state vector."""
    e = np.array(values, dtype=np.float64).reshape(-1)
    if N is not None and e.size != N:
        raise ValueError(f"state has {e.size} sites, expected {N}")
    if e.size == 0:
        raise ValueError("state must have at least one site")
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise ValueError("site energies must be finite and non-negative")
    return e


def _check_energy(x, name):
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"{name} must be finite and non-negative, got {x}")


def rate(e_left, e_right, K):
    """Clock rate min(K, sqrt(min(e_left, e_right)))."""
    _check_energy(e_left, "e_left")
    _check_energy(e_right, "e_right")
    if not K > 0:
        raise ValueError("K must be positive")
    return min(K, math.sqrt(min(e_left, e_right)))


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")


def exchange_pair(e_i, e_j, p):
    """Pool two sites and split the total as (p*S, (1-p)*S)."""
    _check_energy(e_i, "e_i")
    _check_energy(e_j, "e_j")
    _check_p(p)
    s = e_i + e_j
    a = p * s
    # complement by subtraction keeps a + b == s up to one rounding
    return a, max(s - a, 0.0)


def bath_exchange(e_site, x, p):
    """Post-exchange energy p*(e_site + x) of a boundary site."""
    _check_energy(e_site, "e_site")
    _check_energy(x, "x")
    _check_p(p)
    return p * (e_site + x)


def clock_rates(state, params):
    """Rates of the N+1 clocks; entry i-1 belongs to clock i."""
    e = np.asarray(state, dtype=np.float64)
    if e.size != params.N:
        raise ValueError(f"state has {e.size} sites, expected {params.N}")
    ext = np.concatenate(([params.T_L], e, [params.T_R]))
    return np.minimum(params.K, np.sqrt(np.minimum(ext[:-1], ext[1:])))
