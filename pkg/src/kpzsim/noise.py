"""Counter-based randomness.

Every random primitive used by the simulators is a pure function of a seed
and an integer coordinate, computed with the Philox4x64-10 block cipher.  The
numba implementation here is bit-compatible with ``numpy.random.Philox``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Channels keep independent uses of one seed apart.
CH_CLOCKS = 1
CH_VERTEX = 3
CH_IC = 4
CH_IC_AUX = 5
CH_THIN = 6


@nb.njit(cache=True, inline="always")
def _mulhi(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    return a_hi * b_hi + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x64 on counter ``(c0..c3)`` with key ``(k0, k1)``."""
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        hi0 = _mulhi(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _mulhi(_M1, c2)
        lo1 = _M1 * c2
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def to_unit(x):
    """Map a 64-bit word to a double in [0, 1)."""
    return float(np.int64(x >> _S11)) * _INV53


@nb.njit(cache=True)
def uniforms4(seed, channel, a, b, sub):
    """Four uniforms in [0, 1) addressed by ``(seed, channel, a, b, sub)``."""
    r0, r1, r2, r3 = philox4x64(
        np.uint64(np.int64(a)),
        np.uint64(np.int64(b)),
        np.uint64(sub),
        np.uint64(0),
        np.uint64(seed),
        np.uint64(channel),
    )
    return to_unit(r0), to_unit(r1), to_unit(r2), to_unit(r3)


@nb.njit(cache=True)
def site_uniform(seed, channel, site):
    """One uniform per site, e.g. for i.i.d. initial data."""
    u0, _, _, _ = uniforms4(seed, channel, site, 0, 0)
    return u0


@nb.njit(cache=True)
def site_uniforms(seed, channel, lo, n):
    out = np.empty(n)
    for k in range(n):
        out[k] = site_uniform(seed, channel, lo + k)
    return out


def derive_seed(seed: int, index: int) -> int:
    """Seed of replica ``index``: a 64-bit hash of ``(seed, index)``.

    Distinct master seeds give unrelated replica streams, unlike additive or
    xor offsets, which reuse each other's seeds.
    """
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def bernoulli_field(seed: int, channel: int, lo: int, n: int, p: float) -> np.ndarray:
    """I.i.d. Bernoulli(p) values on sites ``lo .. lo+n-1``; site-addressed."""
    return (site_uniforms(np.uint64(seed), channel, lo, n) < p).astype(np.int8)
