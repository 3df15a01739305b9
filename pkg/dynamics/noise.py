"""Seeded two-sided Brownian increments and the stationary OU sequence built on them.

Randomness is counter based: the normals at absolute grid index k come from a
Philox block keyed on the seed with the block number and a stream id in the
counter, so any index can be read in O(1) in any order, from any thread.
"""
import math
from functools import lru_cache

import logfire
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat
from scipy.signal import lfilter

BLOCK = 4096

INCREMENT_STREAM = 0
OU_STREAM = 1
ANCHOR_STREAM = 2
CLOUD_STREAM = 4
BRIDGE_STREAM = 16

_MASK64 = (1 << 64) - 1

# exp(-40) < 1e-17: weight left on an OU anchor after its warmup
ANCHOR_DECAY = 40.0
MAX_WINDOW_BLOCKS = 16
WINDOW_CACHE = 8


@lru_cache(maxsize=1024)
def _normal_block(seed: int, stream: int, block: int) -> np.ndarray:
    counter = np.array([0, block & _MASK64, stream, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=seed, counter=counter))
    out = gen.standard_normal((BLOCK, 2))
    out.flags.writeable = False
    return out


def normals(seed: int, stream: int, start: int, n: int) -> np.ndarray:
    """Standard normal pairs at absolute indices start .. start+n-1 of a stream."""
    if n <= 0:
        return np.zeros((0, 2))
    first = start // BLOCK
    last = (start + n - 1) // BLOCK
    rows = np.concatenate([_normal_block(seed, stream, j) for j in range(first, last + 1)])
    lo = start - first * BLOCK
    return rows[lo:lo + n]


class NoisePath(BaseModel):
    """Brownian increments on the grid t_k = k*tau, shifted by offset grid steps."""
    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, le=_MASK64)
    tau: FiniteFloat = Field(gt=0.0)
    offset: int = 0
    silent: bool = False

    def increments(self, start: int, n: int) -> np.ndarray:
        """Increments dW_start .. dW_{start+n-1}, shape (n, 2)."""
        if self.silent:
            return np.zeros((max(n, 0), 2))
        return math.sqrt(self.tau) * normals(self.seed, INCREMENT_STREAM, start + self.offset, n)

    def increment(self, k: int) -> np.ndarray:
        return self.increments(k, 1)[0]

    def shift(self, l: int) -> "NoisePath":
        return self.model_copy(update={"offset": self.offset + l})


class _OUSeries:
    """Exact grid OU values at absolute indices, materialized a window of blocks at a time.

    Every window is run forward through the exact recursion from a stationary
    anchor warmup blocks earlier. The anchor's weight exp(-gamma*tau*warmup*BLOCK)
    stays below 1e-17, so neighbouring windows join up to rounding and every
    index is a pure function of (seed, tau, gamma).
    """

    def __init__(self, seed: int, tau: float, gamma: float, silent: bool):
        self.seed = seed
        self.tau = tau
        self.gamma = gamma
        self.silent = silent
        self.decay = math.exp(-gamma * tau)
        self.cov = -math.expm1(-gamma * tau) / gamma
        var_int = -math.expm1(-2.0 * gamma * tau) / (2.0 * gamma)
        self.innov_sd = math.sqrt(max(var_int - self.cov * self.cov / tau, 0.0))
        self.stationary_var = 1.0 / (2.0 * gamma)
        self.warmup = max(1, math.ceil(ANCHOR_DECAY / (gamma * tau * BLOCK)))
        self.window_blocks = min(self.warmup, MAX_WINDOW_BLOCKS)
        self.window = lru_cache(maxsize=WINDOW_CACHE)(self._materialize)

    def _innovations(self, start: int, n: int) -> np.ndarray:
        drive = normals(self.seed, INCREMENT_STREAM, start, n)
        fresh = normals(self.seed, OU_STREAM, start, n)
        return (self.cov / math.sqrt(self.tau)) * drive + self.innov_sd * fresh

    def _materialize(self, w: int) -> np.ndarray:
        first = w * self.window_blocks
        den = [1.0, -self.decay]
        anchor = math.sqrt(self.stationary_var) * normals(self.seed, ANCHOR_STREAM, w, 1)
        zi = self.decay * anchor
        kept = []
        for b in range(first - self.warmup, first + self.window_blocks):
            out, zi = lfilter([1.0], den, self._innovations(b * BLOCK, BLOCK), axis=0, zi=zi)
            if b >= first:
                kept.append(out)
        rows = np.concatenate(kept)
        rows.flags.writeable = False
        return rows

    def _decaying(self, start: int, n: int) -> np.ndarray:
        z0 = math.sqrt(self.stationary_var) * normals(self.seed, ANCHOR_STREAM, 0, 1)
        k = np.arange(start, start + n, dtype=float)[:, None]
        return np.exp(-self.gamma * self.tau * k) * z0

    def values(self, start: int, n: int) -> np.ndarray:
        if self.silent:
            return self._decaying(start, n)
        span = self.window_blocks * BLOCK
        first = start // span
        last = (start + n - 1) // span
        rows = np.concatenate([self.window(w) for w in range(first, last + 1)])
        lo = start - first * span
        return rows[lo:lo + n]


@lru_cache(maxsize=32)
def _ou_series(seed: int, tau: float, gamma: float, silent: bool) -> _OUSeries:
    logfire.info(f"NOISE -- materializing OU sequence seed={seed:#x} tau={tau:g} gamma={gamma:g}")
    return _OUSeries(seed, tau, gamma, silent)


class OUPath(BaseModel):
    """Stationary Ornstein-Uhlenbeck sequence Z*_k driven by the increments of base."""
    model_config = ConfigDict(frozen=True)

    gamma_ou: FiniteFloat = Field(default=1.0, gt=0.0)
    base: NoisePath

    def _series(self) -> _OUSeries:
        return _ou_series(self.base.seed, self.base.tau, self.gamma_ou, self.base.silent)

    def ou_values(self, start: int, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros((0, 2))
        return self._series().values(start + self.base.offset, n)

    def ou_value(self, k: int) -> np.ndarray:
        return self.ou_values(k, 1)[0]

    def ou_tilde(self, k: int) -> np.ndarray:
        """Z~*_k := (Z*_{k-1} - Z*_k + dW_k) / gamma, so that the OU3 identity holds by construction."""
        z = self.ou_values(k - 1, 2)
        return (z[0] - z[1] + self.base.increment(k)) / self.gamma_ou

    def shift(self, l: int) -> "OUPath":
        return self.model_copy(update={"base": self.base.shift(l)})


def refine_increments(coarse: np.ndarray, tau: float, levels: int, seed: int) -> np.ndarray:
    """Brownian-bridge halving of coarse increments, applied levels times.

    Each increment dW over a step h is split into (dW/2 + sqrt(h)/2 * z, dW - first half).
    """
    w = np.asarray(coarse, dtype=float)
    h = tau
    for level in range(levels):
        z = normals(seed, BRIDGE_STREAM + level, 0, w.shape[0])
        first = 0.5 * w + 0.5 * math.sqrt(h) * z
        out = np.empty((2 * w.shape[0], 2))
        out[0::2] = first
        out[1::2] = w - first
        w = out
        h *= 0.5
    return w


def aggregate_increments(fine: np.ndarray, m: int) -> np.ndarray:
    """Sum consecutive groups of m fine increments."""
    fine = np.asarray(fine)
    if fine.shape[0] % m:
        raise ValueError(f"cannot group {fine.shape[0]} increments into blocks of {m}")
    return fine.reshape(-1, m, 2).sum(axis=1)
