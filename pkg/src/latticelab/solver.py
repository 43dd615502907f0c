"""Exact absorption functionals on a finite window via banded linear solves.

The windowed killed march has a well-defined infinite-horizon limit: every
unit of mass eventually lands in an absorbing class (a killing site inside
the window, or the exterior of the window).  For a weight function ``t``
on absorbed positions, ``h(z) = E_z[t(absorption position)]`` solves

    (I - P_live) h = b,     b(z) = sum_off p(off) * t(z + off),

where ``P_live`` is the substochastic transition matrix restricted to live
window sites.  The matrix is banded with bandwidth equal to the law's span,
so one LU factorization serves any number of weight functions at once.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .laws import IncrementLaw


class AbsorptionSystem:
    """Window [lo, hi] with killing sites; solves E_z[t(absorbed position)].

    ``targets`` are weight vectors over the extended coordinate range
    [lo - max_down, hi + max_up]; live sites must carry weight zero there.
    """

    def __init__(self, law: IncrementLaw, lo: int, hi: int, killed_sites):
        self.law = law
        self.lo = int(lo)
        self.hi = int(hi)
        killed = np.asarray(sorted(set(int(s) for s in killed_sites)), dtype=np.int64)
        if killed.size and (killed.min() < lo or killed.max() > hi):
            raise ValueError("killing sites must lie inside the window")
        W = self.hi - self.lo + 1
        mask = np.zeros(W, dtype=bool)
        mask[killed - self.lo] = True
        self.live_sites = np.arange(self.lo, self.hi + 1, dtype=np.int64)[~mask]
        self.killed_sites = killed
        self.ext_lo = self.lo - law.max_down
        self.ext_hi = self.hi + law.max_up
        self._factorized = None

    # -- matrix assembly ----------------------------------------------------
    def _band(self):
        sites = self.live_sites
        M = sites.size
        span = self.law.span
        l = u = span  # live-index distance never exceeds site distance
        ab = np.zeros((l + u + 1, M), dtype=np.float64)
        ab[u, :] = 1.0
        i_all = np.arange(M)
        for off, p in self.law.atoms:
            dest = sites + off
            j = np.searchsorted(sites, dest)
            ok = (j < M) & (sites[np.minimum(j, M - 1)] == dest)
            ii = i_all[ok]
            jj = j[ok]
            ab[u + ii - jj, jj] -= p
        return l, u, ab

    def solve(self, targets: np.ndarray) -> np.ndarray:
        """targets: (T, ext_width) weights; returns (M, T) values on live sites."""
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        ext_width = self.ext_hi - self.ext_lo + 1
        if targets.shape[1] != ext_width:
            raise ValueError(f"target width {targets.shape[1]} != extended width {ext_width}")
        sites = self.live_sites
        M = sites.size
        rhs = np.zeros((M, targets.shape[0]), dtype=np.float64)
        live_mask = np.zeros(ext_width, dtype=bool)
        live_mask[sites - self.ext_lo] = True
        if np.any(targets[:, live_mask] != 0.0):
            raise ValueError("targets must vanish on live sites")
        for off, p in self.law.atoms:
            cols = sites + off - self.ext_lo
            w = targets[:, cols]  # (T, M)
            rhs += p * w.T
        l, u, ab = self._band()
        return solve_banded((l, u), ab, rhs)

    def values_at(self, solution: np.ndarray, xs) -> np.ndarray:
        """Read a solve() result at specific live sites."""
        idx = np.searchsorted(self.live_sites, xs)
        idx = np.clip(idx, 0, self.live_sites.size - 1)
        ok = self.live_sites[idx] == np.asarray(xs)
        if not np.all(ok):
            bad = np.asarray(xs)[~ok]
            raise ValueError(f"sites {bad} are not live in this window")
        return solution[idx]

    # -- convenience builders ------------------------------------------------
    def ext_width(self) -> int:
        return self.ext_hi - self.ext_lo + 1

    def target_for_sites(self, sites_weights: dict[int, float]) -> np.ndarray:
        t = np.zeros(self.ext_width(), dtype=np.float64)
        for s, w in sites_weights.items():
            t[int(s) - self.ext_lo] = float(w)
        return t

    def target_indicator(self, predicate) -> np.ndarray:
        """Weight 1 on every *absorbed* coordinate satisfying the predicate."""
        coords = np.arange(self.ext_lo, self.ext_hi + 1)
        t = predicate(coords).astype(np.float64)
        live = np.zeros(coords.size, dtype=bool)
        live[self.live_sites - self.ext_lo] = True
        t[live] = 0.0
        return t

    def target_weights(self, fn) -> np.ndarray:
        """Arbitrary weight fn(coords) on absorbed coordinates."""
        coords = np.arange(self.ext_lo, self.ext_hi + 1)
        t = np.asarray(fn(coords), dtype=np.float64)
        live = np.zeros(coords.size, dtype=bool)
        live[self.live_sites - self.ext_lo] = True
        t[live] = 0.0
        return t


def richardson_in_inverse(values: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Extrapolate f(L) = f + c1/L + c2/L**2 + ... to L = infinity.

    ``values`` has shape (k, ...) matching ``scales`` of shape (k,); fits a
    polynomial in 1/L through all k points and returns its constant term.
    """
    scales = np.asarray(scales, dtype=np.float64)
    k = scales.size
    V = np.vander(1.0 / scales, k, increasing=True)  # columns: 1, 1/L, 1/L^2...
    vals = np.asarray(values, dtype=np.float64).reshape(k, -1)
    coef = np.linalg.solve(V, vals)
    out = coef[0]
    return out.reshape(np.asarray(values).shape[1:]) if np.ndim(values) > 1 else float(out[0])


def aitken_limit(y0: float, y1: float, y2: float) -> float:
    """Aitken delta-squared limit of a (nearly) geometric sequence."""
    d1 = y1 - y0
    d2 = y2 - y1
    denom = d2 - d1
    if denom == 0.0:
        return y2
    return y2 - d2 * d2 / denom
