"""Band-constrained DTW, aligned-path Pearson correlation and rolling block permutation."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numba
import numpy as np

INF = np.inf


@numba.njit(cache=True)
def _cost_matrix(x, y, band):
    n, m = x.shape[0], y.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        lo = max(1, i - band)
        hi = min(m, i + band)
        for j in range(lo, hi + 1):
            c = (x[i - 1] - y[j - 1]) ** 2
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = c + best
    return D


@numba.njit(cache=True)
def _backtrack(D):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    pi = np.empty(i + j, dtype=np.int64)
    pj = np.empty(i + j, dtype=np.int64)
    k = 0
    while True:
        pi[k] = i - 1
        pj[k] = j - 1
        k += 1
        if i == 1 and j == 1:
            break
        diag = D[i - 1, j - 1]
        up = D[i - 1, j]
        left = D[i, j - 1]
        # ties prefer the diagonal, then the vertical step
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    return pi[:k][::-1].copy(), pj[:k][::-1].copy()


@numba.njit(cache=True)
def _pearson_path(x, y, pi, pj):
    k = pi.shape[0]
    mx = 0.0
    my = 0.0
    for t in range(k):
        mx += x[pi[t]]
        my += y[pj[t]]
    mx /= k
    my /= k
    sxy = 0.0
    sxx = 0.0
    syy = 0.0
    for t in range(k):
        a = x[pi[t]] - mx
        b = y[pj[t]] - my
        sxy += a * b
        sxx += a * a
        syy += b * b
    if sxx <= 0.0 or syy <= 0.0:
        return np.nan
    r = sxy / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@numba.njit(cache=True)
def _dtw_r(x, y, band):
    D = _cost_matrix(x, y, band)
    pi, pj = _backtrack(D)
    return _pearson_path(x, y, pi, pj)


@numba.njit(cache=True)
def _dtw_r_batch(x, Y, band):
    out = np.empty(Y.shape[0])
    for b in range(Y.shape[0]):
        out[b] = _dtw_r(x, Y[b], band)
    return out


@dataclass
class DtwAlignment:
    cost: float
    path: list[tuple[int, int]]
    r: float


def _standardise(v: np.ndarray) -> np.ndarray | None:
    v = np.asarray(v, dtype=float)
    sd = v.std()
    if not sd > 0 or np.isnan(sd):
        return None
    return (v - v.mean()) / sd


def dtw_align(x: np.ndarray, y: np.ndarray, band: int) -> DtwAlignment:
    """DTW on raw inputs under ``|i - j| <= band`` with squared local cost."""
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("DTW inputs must have equal length")
    D = _cost_matrix(x, y, int(band))
    pi, pj = _backtrack(D)
    r = _pearson_path(x, y, pi, pj)
    return DtwAlignment(float(D[-1, -1]), list(zip(pi.tolist(), pj.tolist())), float(r))


def dtw_pearson(x: np.ndarray, y: np.ndarray, band: int) -> float:
    """Pearson correlation over the DTW-aligned path of the standardised inputs.

    ``NaN`` when either input has zero variance.
    """
    xs, ys = _standardise(x), _standardise(y)
    if xs is None or ys is None:
        return math.nan
    if xs.shape != ys.shape:
        raise ValueError("DTW inputs must have equal length")
    return float(_dtw_r(xs, ys, int(band)))


def block_permutations(n: int, block: int, n_perm: int, rng: np.random.Generator) -> np.ndarray:
    """``(n_perm, n)`` index arrays that reorder contiguous blocks of size ``block``."""
    starts = np.arange(0, n, block)
    blocks = [np.arange(s, min(s + block, n)) for s in starts]
    out = np.empty((n_perm, n), dtype=np.int64)
    for b in range(n_perm):
        order = rng.permutation(len(blocks))
        out[b] = np.concatenate([blocks[i] for i in order])
    return out


def permutation_pvalue(
    x: np.ndarray, y: np.ndarray, band: int, n_perm: int, block: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Observed DTW-Pearson ``r`` and the share of block-permuted ``|r|`` at least as large.

    A single block cannot be reordered, so ``p = 1`` by convention.
    """
    xs, ys = _standardise(x), _standardise(y)
    if xs is None or ys is None:
        return math.nan, math.nan
    r = float(_dtw_r(xs, ys, int(band)))
    n = xs.shape[0]
    if block >= n:
        return r, 1.0
    idx = block_permutations(n, block, n_perm, rng)
    rp = _dtw_r_batch(xs, np.ascontiguousarray(ys[idx]), int(band))
    rp = rp[~np.isnan(rp)]
    if rp.size == 0:
        return r, math.nan
    return r, float(np.count_nonzero(np.abs(rp) >= abs(r) - 1e-12) / rp.size)


@dataclass(frozen=True)
class DtwWindow:
    end: int
    r: float
    p_perm: float


def window_rng(seed: int, key: str, end: int) -> np.random.Generator:
    """Counter-based stream so results do not depend on evaluation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(key.encode()), int(end)])


def rolling_dtw(
    s: np.ndarray,
    y: np.ndarray,
    window: int = 52,
    step: int = 4,
    band: int = 8,
    n_perm: int = 500,
    block: int | None = None,
    seed: int = 0,
    key: str = "",
) -> list[DtwWindow]:
    """DTW-Pearson with block-permutation p-values over fully observed rolling windows."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    block = band if block is None else block
    out = []
    for end in range(window - 1, s.shape[0], step):
        ws, wy = s[end - window + 1: end + 1], y[end - window + 1: end + 1]
        if np.isnan(ws).any() or np.isnan(wy).any():
            continue
        r, p = permutation_pvalue(ws, wy, band, n_perm, block, window_rng(seed, key, end))
        if math.isnan(r):
            continue
        out.append(DtwWindow(end, r, p))
    return out
