"""Lattice of matrix coefficients generated by the delay recursion.

Entries live on (level k, multi-index i) where i counts repetitions of
each delay.  Level 0 is identically zero and any negative coordinate
resolves to the zero matrix.  Level 1 carries the neutral structure: it
is seeded with the identity at the origin and filled by

    C_1(i) = sum_j A_j C_1(i - e_j),

i.e. the sum over all orderings (words) of the neutral matrices with
content i.  Higher levels follow

    C_{k+1}(i) = B C_k(i) + sum_j F_j C_k(i - e_j) + sum_j A_j C_{k+1}(i - e_j).

Within a level the dependence is on strictly smaller total lag, so
filling in nondecreasing lag order is well founded and the result does
not depend on how ties are broken.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["CoefficientTable", "build", "majorant_table", "lag_of"]


class LatticeError(ValueError):
    pass


def lag_of(index: Sequence[int], delays: Sequence[float]) -> float:
    return float(sum(i * r for i, r in zip(index, delays)))


def _enumerate_indices(delays, budget):
    """All multi-indices with total lag <= budget, in nondecreasing lag order."""
    eps = 1e-12 * max(1.0, budget)
    d = len(delays)

    def rec(prefix, remaining):
        if len(prefix) == d:
            yield tuple(prefix)
            return
        r = delays[len(prefix)]
        m = int(np.floor((remaining + eps) / r))
        for i in range(m + 1):
            yield from rec(prefix + [i], remaining - i * r)

    return list(rec([], budget))


@dataclass
class CoefficientTable:
    n: int
    delays: tuple
    level_max: int
    lag_budget: float
    indices: list                      # ordered multi-indices, lag nondecreasing
    lags: np.ndarray                   # aligned with indices
    levels: list                       # levels[k] has shape (len(indices), n, n)
    _pos: dict = field(repr=False, default_factory=dict)
    _cache: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._pos:
            self._pos = {idx: j for j, idx in enumerate(self.indices)}

    def entry(self, k: int, index) -> np.ndarray:
        index = tuple(int(v) for v in index)
        if any(v < 0 for v in index):
            return np.zeros((self.n, self.n))
        if not (0 <= k <= self.level_max):
            raise LatticeError(f"level {k} outside [0, {self.level_max}]")
        pos = self._pos.get(index)
        if pos is None:
            raise LatticeError(f"index {index} exceeds the lag budget {self.lag_budget}")
        return self.levels[k][pos]

    def stacked(self, k: int) -> np.ndarray:
        return self.levels[k]

    def to_csv(self, path) -> None:
        d = len(self.delays)
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + [f"i{j+1}" for j in range(d)]
                       + [f"m{r+1}{c+1}" for r in range(self.n) for c in range(self.n)])
            for k in range(self.level_max + 1):
                for idx in self.indices:
                    mat = self.entry(k, idx)
                    w.writerow([k] + list(idx) + [f"{v:.17g}" for v in mat.ravel()])


def build(delays: Sequence[float], A: Sequence[np.ndarray], B: np.ndarray,
          F: Sequence[np.ndarray], level_max: int, lag_budget: float,
          tie_break: str = "lex") -> CoefficientTable:
    """Fill the table for all levels <= level_max and lags <= lag_budget."""
    delays = tuple(float(r) for r in delays)
    if any(r <= 0 for r in delays):
        raise LatticeError("delays must be positive")
    if level_max < 1:
        raise LatticeError("level_max must be >= 1")
    if lag_budget < 0:
        raise LatticeError("lag budget must be >= 0")
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if B.shape != (n, n):
        raise LatticeError("B must be square")
    A = [np.asarray(m, dtype=float) for m in A]
    F = [np.asarray(m, dtype=float) for m in F]
    if len(A) != len(delays) or len(F) != len(delays):
        raise LatticeError("need one neutral and one delay matrix per delay")
    for m in A + F:
        if m.shape != (n, n):
            raise LatticeError("all coefficient matrices must share the same shape")

    indices = _enumerate_indices(delays, lag_budget)
    lags = np.array([lag_of(i, delays) for i in indices])
    if tie_break == "lex":
        order = sorted(range(len(indices)), key=lambda j: (lags[j], indices[j]))
    elif tie_break == "revlex":
        order = sorted(range(len(indices)),
                       key=lambda j: (lags[j], tuple(-v for v in indices[j])))
    else:
        raise LatticeError(f"unknown tie_break {tie_break!r}")
    indices = [indices[j] for j in order]
    lags = lags[order]
    pos = {idx: j for j, idx in enumerate(indices)}
    L = len(indices)
    d = len(delays)

    def shifted(level_mat, idx, j):
        prev = tuple(idx[m] - (1 if m == j else 0) for m in range(d))
        if any(v < 0 for v in prev):
            return None
        return level_mat[pos[prev]]

    levels = [np.zeros((L, n, n))]

    lvl1 = np.zeros((L, n, n))
    for row, idx in enumerate(indices):
        if all(v == 0 for v in idx):
            lvl1[row] = np.eye(n)
            continue
        acc = np.zeros((n, n))
        for j in range(d):
            prev = shifted(lvl1, idx, j)
            if prev is not None:
                acc += A[j] @ prev
        lvl1[row] = acc
    levels.append(lvl1)

    for _k in range(2, level_max + 1):
        prev_lvl = levels[-1]
        cur = np.zeros((L, n, n))
        for row, idx in enumerate(indices):
            acc = B @ prev_lvl[row]
            for j in range(d):
                pf = shifted(prev_lvl, idx, j)
                if pf is not None:
                    acc += F[j] @ pf
                pa = shifted(cur, idx, j)
                if pa is not None:
                    acc += A[j] @ pa
            cur[row] = acc
        levels.append(cur)

    return CoefficientTable(n=n, delays=delays, level_max=level_max,
                            lag_budget=float(lag_budget), indices=indices,
                            lags=lags, levels=levels)


def majorant_table(a: Sequence[float], b: float, f: Sequence[float],
                   delays: Sequence[float], level_max: int,
                   lag_budget: float) -> CoefficientTable:
    """Scalar table built from nonnegative coefficient norms.

    With a_j >= ||A_j||, b >= ||B||, f_j >= ||F_j|| (any operator norm
    induced by a vector norm) every scalar entry dominates the norm of
    the corresponding matrix entry.
    """
    if any(v < 0 for v in list(a) + [b] + list(f)):
        raise LatticeError("majorant coefficients must be nonnegative")
    return build(delays, [np.array([[v]]) for v in a], np.array([[b]]),
                 [np.array([[v]]) for v in f], level_max, lag_budget)
