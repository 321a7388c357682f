"""Counter-based normal variates.

Every draw is a pure function of ``(seed, stream, step, label)``; no generator
state is carried between calls. This is what lets a raw and a cut-off particle
system consume exactly the same Brownian increments, and lets replicas be
generated in any order.

The block function is Philox4x64-10 (Salmon et al., SC'11), vectorised over
counters. Its output agrees bit for bit with :class:`numpy.random.Philox`.
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox4x64", "uniforms", "normals", "STREAM_NOISE", "STREAM_INIT",
           "STREAM_MCKEAN", "STREAM_TEST"]

STREAM_NOISE = 0
STREAM_INIT = 1
STREAM_MCKEAN = 2
STREAM_TEST = 3

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    lo = a * b
    return hi, lo


def philox4x64(counter: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Philox4x64-10 block function.

    Parameters
    ----------
    counter : uint64 array of shape (..., 4)
    key : uint64 array of shape (..., 2), broadcastable against ``counter``

    Returns
    -------
    uint64 array of shape (..., 4)
    """
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    with np.errstate(over="ignore"):
        c0, c1, c2, c3 = (counter[..., i].copy() for i in range(4))
        k0 = np.broadcast_to(key[..., 0], c0.shape).copy()
        k1 = np.broadcast_to(key[..., 1], c0.shape).copy()
        for rnd in range(10):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            if rnd < 9:
                k0 = k0 + _W0
                k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def _block(seed: int, stream: int, step: int, labels: np.ndarray, blocks: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.uint64)
    ctr = np.zeros(labels.shape + (blocks, 4), dtype=np.uint64)
    ctr[..., 0] = np.uint64(step & 0xFFFFFFFFFFFFFFFF)
    ctr[..., 1] = labels[..., None]
    ctr[..., 2] = np.arange(blocks, dtype=np.uint64)
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return philox4x64(ctr, key).reshape(labels.shape + (4 * blocks,))


def uniforms(seed: int, stream: int, step: int, labels, count: int) -> np.ndarray:
    """``count`` uniforms in the open interval (0, 1) per label."""
    blocks = -(-count // 4)
    raw = _block(seed, stream, step, labels, blocks)[..., :count]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normals(seed: int, stream: int, step: int, labels, dim: int) -> np.ndarray:
    """Standard normals of shape ``(len(labels), dim)`` by Box-Muller.

    The value for (seed, stream, step, label, coordinate) does not depend on
    which other labels are requested alongside it.
    """
    pairs = -(-dim // 2)
    u = uniforms(seed, stream, step, labels, 2 * pairs)
    rad = np.sqrt(-2.0 * np.log(u[..., 0::2]))
    ang = 2.0 * np.pi * u[..., 1::2]
    z = np.empty(u.shape[:-1] + (2 * pairs,))
    z[..., 0::2] = rad * np.cos(ang)
    z[..., 1::2] = rad * np.sin(ang)
    return z[..., :dim]
