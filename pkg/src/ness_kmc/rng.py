"""Counter-based random streams (Philox4x64-10).

Every draw is addressed by ``(seed, stream_id, counter, domain)``: the key is
``(seed, stream_id)`` and the 256-bit counter is ``(counter, domain, 0, 0)``.
One call to :func:`philox_block` yields four 64-bit words, which is exactly
one simulation event's worth of randomness (waiting time, clock selection,
exchange fraction, bath draw).  Streams never share state, so trajectories
can be run in any order on any number of workers.

The block function reproduces ``numpy.random.Philox`` bit for bit; numpy's
generator increments its counter before producing output, so
``Philox(key=k, counter=c).random_raw(4)`` equals ``philox_block(k, c + 1)``.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "RngStream",
    "DOMAIN_EVENTS",
    "DOMAIN_INITIAL",
    "DOMAIN_PILOT",
    "DOMAIN_AUX",
    "philox_block",
    "u01_open",
]

DOMAIN_EVENTS = 0
DOMAIN_INITIAL = 1
DOMAIN_PILOT = 2
DOMAIN_AUX = 3

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
# 52-bit mantissa: (k + 0.5)/2^52 is exact, so 0 < u < 1 even at the extremes
_S12 = np.uint64(12)
_INV52 = 1.0 / 4503599627370496.0


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, lo


@njit(cache=True)
def philox_block(k0, k1, c0, c1, c2, c3):
    """Philox4x64-10 on key ``(k0, k1)`` and counter ``(c0, c1, c2, c3)``."""
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def u01_open(x):
    """Map a 64-bit word to a double strictly inside (0, 1)."""
    return ((x >> _S12) + 0.5) * _INV52


@dataclass(frozen=True)
class RngStream:
    """Reproducible stream identified by ``(seed, stream_id)``.

    ``uniforms`` draws whole Philox blocks from a given domain; the event loop
    uses domain 0 with the event index as counter, initial-state sampling uses
    domain 1, pilot calibration runs domain 2.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    @property
    def key(self):
        return np.uint64(self.seed), np.uint64(self.stream_id)

    def block(self, counter, domain=DOMAIN_EVENTS):
        k0, k1 = self.key
        return np.array(
            philox_block(k0, k1, np.uint64(counter), np.uint64(domain), np.uint64(0), np.uint64(0)),
            dtype=np.uint64,
        )

    def uniforms(self, n, domain=DOMAIN_AUX, start=0):
        """``n`` open-interval uniforms from consecutive blocks of ``domain``."""
        nblocks = -(-n // 4)
        out = np.empty(4 * nblocks)
        for b in range(nblocks):
            words = self.block(start + b, domain)
            out[4 * b:4 * b + 4] = ((words >> _S12).astype(np.float64) + 0.5) * _INV52
        return out[:n]

    def spawn(self, stream_id):
        return RngStream(self.seed, stream_id)
