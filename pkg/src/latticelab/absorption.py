"""Ladder structures, half-line harmonic functions and hitting distributions.

Strict ladder entrance laws are absorption probabilities of the walk on a
half-line window; they are computed by the banded solver on a ladder of
window sizes and extrapolated in the reciprocal window size (the truncation
bias is one power of 1/L).  The renewal mass functions v+- and the harmonic
functions f+- follow by the renewal recursion

    f+(x) = E|S at first entrance into (-inf,-1]| * (v-(1) + ... + v-(x)),

and the half-line Green function and from-infinity hitting law of
(-inf, 0] are assembled from them in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import Disagreement, ExtrapolationUnstable, LadderNotConverged, OutOfRange
from .kernel import FiniteSet
from .laws import IncrementLaw, reflect_law
from .solver import AbsorptionSystem, richardson_in_inverse

LADDER_TAIL_TOL = 1e-6
HITTING_DEFICIT_TOL = 1e-4
HALFLINE_FORMS_TOL = 1e-8

_LADDER_CACHE: dict = {}


@dataclass
class LadderStructures:
    law: IncrementLaw
    xmax: int
    ascending_law: dict[int, float]  # entrance heights into [1, inf) from 0
    descending_law: dict[int, float]  # entrance sites in (-inf, -1] from 0
    v_plus: np.ndarray  # index x in 1..xmax
    v_minus: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    mean_asc: float  # E_0[S at entrance into [1, inf)]
    mean_desc: float  # E_0[|S| at entrance into (-inf, -1]]
    weak_asc_mean: float  # E_0[S at entrance into [0, inf)]
    weak_desc_mean: float  # E_0[|S| at entrance into (-inf, 0]]
    tail_mass: float

    def f_plus_at(self, x: int) -> float:
        if not 1 <= x <= self.xmax:
            raise OutOfRange(f"f+ tabulated on [1, {self.xmax}]")
        return float(self.f_plus[x])

    def f_minus_at(self, x: int) -> float:
        if not 1 <= x <= self.xmax:
            raise OutOfRange(f"f- tabulated on [1, {self.xmax}]")
        return float(self.f_minus[x])

    def wiener_hopf_residual(self) -> float:
        """max deviation of strict*weak ladder mean products from sigma^2/2."""
        half = self.law.sigma2 / 2.0
        return max(
            abs(self.mean_asc * self.weak_desc_mean - half),
            abs(self.mean_desc * self.weak_asc_mean - half),
        )


@dataclass
class HittingLaw:
    target: object
    source: object  # int or '+inf' / '-inf'
    masses: dict[int, float]
    deficit: float

    def mass_at(self, site: int) -> float:
        return self.masses.get(int(site), 0.0)

    def mean_site(self) -> float:
        return sum(s * m for s, m in self.masses.items())


def _entrance_law_up(law: IncrementLaw, window: int) -> dict[int, float]:
    """Strict ascending entrance law on one window: live sites [-L, 0]."""
    sys = AbsorptionSystem(law, -window, 0, [])
    sites = list(range(1, law.max_up + 1))
    targets = np.stack([sys.target_for_sites({s: 1.0}) for s in sites])
    sol = sys.solve(targets)
    row = sys.values_at(sol, [0])[0]
    return {s: float(v) for s, v in zip(sites, row)}


def _entrance_law_down(law: IncrementLaw, window: int) -> dict[int, float]:
    """Strict descending entrance law on one window: live sites [0, L]."""
    sys = AbsorptionSystem(law, 0, window, [])
    sites = list(range(-law.max_down, 0))
    targets = np.stack([sys.target_for_sites({s: 1.0}) for s in sites])
    sol = sys.solve(targets)
    row = sys.values_at(sol, [0])[0]
    return {s: float(v) for s, v in zip(sites, row)}


def _weak_mean(law: IncrementLaw, down: bool, window: int) -> float:
    """E_0[|S| at first entrance into (-inf,0]] (down) or [0,inf) mirror."""
    lw = law if down else reflect_law(law)
    sys = AbsorptionSystem(lw, 1, window, [])
    target = sys.target_weights(lambda c: np.where(c <= 0, -c, 0.0).astype(float))
    sol = sys.solve(target[None, :])[:, 0]
    # explicit first step from 0
    val = 0.0
    for off, p in lw.atoms:
        z = off
        if z <= 0:
            val += p * (-z)
        elif z <= window:
            val += p * float(sys.values_at(sol, [z])[0])
        # beyond the window: truncation, handled by extrapolation
    return val


def _extrapolate_laws(laws: list[dict[int, float]], windows) -> dict[int, float]:
    sites = sorted(set().union(*[d.keys() for d in laws]))
    vals = np.array([[d.get(s, 0.0) for s in sites] for d in laws])
    if len(laws) == 1:
        out = vals[0]
    else:
        out = richardson_in_inverse(vals, np.asarray(windows, dtype=float))
    out = np.clip(np.atleast_1d(out), 0.0, 1.0)
    return {s: float(v) for s, v in zip(sites, out)}


def _renewal_mass(entry_law: dict[int, float], xmax: int) -> np.ndarray:
    """u(k) for the renewal process of |entrance| heights; v(x) = u(x-1)."""
    heights = {abs(s): p for s, p in entry_law.items()}
    u = np.zeros(xmax + 1)
    u[0] = 1.0
    for k in range(1, xmax + 1):
        u[k] = sum(p * u[k - h] for h, p in heights.items() if h <= k)
    v = np.zeros(xmax + 1)
    v[1:] = u[: xmax]
    return v


def ladder_structures(
    law: IncrementLaw, xmax: int, windows: tuple[int, ...] | None = None
) -> LadderStructures:
    """Build ladder laws, renewal functions and f+- up to xmax."""
    key = (law.atoms, xmax, windows)
    hit = _LADDER_CACHE.get(key)
    if hit is not None:
        return hit
    if windows is None:
        windows = (2048, 4096, 8192) if law.span <= 24 else (1024, 2048, 4096)
    asc = _extrapolate_laws([_entrance_law_up(law, L) for L in windows], windows)
    desc = _extrapolate_laws([_entrance_law_down(law, L) for L in windows], windows)
    tail = max(abs(1.0 - sum(asc.values())), abs(1.0 - sum(desc.values())))
    if tail >= LADDER_TAIL_TOL:
        raise LadderNotConverged(f"ladder mass deficit {tail:.2e} after extrapolation")

    mean_asc = sum(s * p for s, p in asc.items())
    mean_desc = sum(-s * p for s, p in desc.items())
    weak_desc = richardson_in_inverse(
        np.array([[_weak_mean(law, True, L)] for L in windows]), np.asarray(windows, float)
    )
    weak_asc = richardson_in_inverse(
        np.array([[_weak_mean(law, False, L)] for L in windows]), np.asarray(windows, float)
    )

    v_plus = _renewal_mass(asc, xmax)
    v_minus = _renewal_mass(desc, xmax)
    f_plus = np.zeros(xmax + 1)
    f_minus = np.zeros(xmax + 1)
    f_plus[1:] = mean_desc * np.cumsum(v_minus[1:])
    f_minus[1:] = mean_asc * np.cumsum(v_plus[1:])
    out = LadderStructures(
        law=law,
        xmax=xmax,
        ascending_law=asc,
        descending_law=desc,
        v_plus=v_plus,
        v_minus=v_minus,
        f_plus=f_plus,
        f_minus=f_minus,
        mean_asc=float(mean_asc),
        mean_desc=float(mean_desc),
        weak_asc_mean=float(weak_asc),
        weak_desc_mean=float(weak_desc),
        tail_mass=float(tail),
    )
    _LADDER_CACHE[key] = out
    return out


def green_halfline(structures: LadderStructures, x: int, y: int) -> float:
    """Green function of the walk killed on (-inf, 0]:
    (2/sigma^2) sum_{z=0}^{x^y-1} v+(x-z) v-(y-z)."""
    if x < 1 or y < 1:
        raise OutOfRange("green_halfline needs x, y >= 1")
    if x > structures.xmax or y > structures.xmax:
        raise OutOfRange(f"x, y must be <= xmax={structures.xmax}")
    m = min(x, y)
    zs = np.arange(m)
    total = float(np.dot(structures.v_plus[x - zs], structures.v_minus[y - zs]))
    return 2.0 / structures.law.sigma2 * total


def hitting_halfline_inf(
    structures: LadderStructures, law: IncrementLaw, ymin: int | None = None
) -> HittingLaw:
    """Entrance law of (-inf, 0] from far to the right.

    Primary form: H(y) = (2/sigma^2) sum_w f^-(w) p(y-w); cross-checked
    against the summation-by-parts form built from the increments of f^-
    and against the renewal overshoot law of the descending ladder.
    """
    down = law.max_down
    if ymin is None:
        ymin = 1 - down
    if ymin < 1 - down:
        ymin = 1 - down  # nothing lands lower in one jump
    if structures.xmax < down:
        raise OutOfRange("ladder table too short: need xmax >= max down-jump")
    s2 = law.sigma2
    masses = {}
    cross = {}
    for y in range(ymin, 1):
        tot = 0.0
        totc = 0.0
        for w in range(1, y + down + 1):
            tot += structures.f_minus[w] * law.prob_of(y - w)
            df = structures.f_minus[w] - (structures.f_minus[w - 1] if w >= 2 else 0.0)
            totc += df * law.cdf(y - w)
        masses[y] = 2.0 / s2 * tot
        cross[y] = 2.0 / s2 * totc
    dev = max(abs(masses[y] - cross[y]) for y in masses)
    if dev > HALFLINE_FORMS_TOL:
        raise Disagreement(f"half-line hitting forms differ by {dev:.2e}")
    deficit = 1.0 - sum(masses.values())
    return HittingLaw(target="halfline<=0", source="+inf", masses=masses, deficit=deficit)


def overshoot_law_check(structures: LadderStructures) -> float:
    """Max deviation of H^{+inf} from the stationary ladder overshoot
    P[D > k]/E[D]; a third, independent route to the same law."""
    desc = structures.descending_law
    e_d = sum(-s * p for s, p in desc.items())
    h = hitting_halfline_inf(structures, structures.law)
    dev = 0.0
    for y, m in h.masses.items():
        tail = sum(p for s, p in desc.items() if -s > -y)
        dev = max(dev, abs(m - tail / e_d))
    return dev


def hitting_halfline(
    law: IncrementLaw, x: int, windows: tuple[int, ...] = (512, 1024, 2048)
) -> HittingLaw:
    """Entrance law of (-inf, 0] from a finite x > 0 (window-extrapolated)."""
    if x < 1:
        raise ValueError("source must be >= 1")
    down = law.max_down
    sites = list(range(1 - down, 1))
    rows = []
    for L in windows:
        sys = AbsorptionSystem(law, 1, L, [])
        targets = np.stack([sys.target_for_sites({s: 1.0}) for s in sites])
        sol = sys.solve(targets)
        rows.append(sys.values_at(sol, [x])[0])
    vals = richardson_in_inverse(np.stack(rows), np.asarray(windows, float))
    masses = {s: float(np.clip(v, 0.0, 1.0)) for s, v in zip(sites, np.atleast_1d(vals))}
    return HittingLaw(
        target="halfline<=0", source=x, masses=masses, deficit=1.0 - sum(masses.values())
    )


def _finite_solutions(law: IncrementLaw, A: FiniteSet, L: int):
    sys = AbsorptionSystem(law, -L, L, A.sites)
    targets = np.stack([sys.target_for_sites({s: 1.0}) for s in A.sites])
    sol = sys.solve(targets)
    return sys, sol


def _value_rows(law, sys, sol, xs, A: FiniteSet):
    """H^x_A(xi) rows for arbitrary x (one-step unrolled when x is killed)."""
    rows = np.zeros((len(xs), len(A.sites)))
    a_index = {s: j for j, s in enumerate(A.sites)}
    live = set(int(s) for s in sys.live_sites)
    for i, x in enumerate(xs):
        if int(x) in live:
            rows[i] = sys.values_at(sol, [int(x)])[0]
            continue
        for off, p in law.atoms:
            z = int(x) + off
            j = a_index.get(z)
            if j is not None:
                rows[i, j] += p
            elif z in live:
                rows[i] += p * sys.values_at(sol, [z])[0]
            # outside the window: truncated, absorbed by extrapolation
    return rows


def hitting_finite_batch(
    law: IncrementLaw,
    A: FiniteSet,
    xs,
    windows: tuple[int, ...] = (256, 512, 1024),
) -> tuple[np.ndarray, np.ndarray]:
    """H^x_A(xi) for every x in xs; returns (masses (len(xs), |A|), deficits)."""
    xs = [int(x) for x in xs]
    per_window = []
    for L in windows:
        if max(abs(x) for x in xs) >= L - law.span:
            raise ValueError("window ladder too small for requested sources")
        sys, sol = _finite_solutions(law, A, L)
        per_window.append(_value_rows(law, sys, sol, xs, A))
    stack = np.stack(per_window)  # (W, X, S)
    flat = richardson_in_inverse(stack.reshape(len(windows), -1), np.asarray(windows, float))
    masses = np.clip(np.asarray(flat).reshape(len(xs), len(A.sites)), 0.0, 1.0)
    deficits = 1.0 - masses.sum(axis=1)
    return masses, deficits


def hitting_finite(
    law: IncrementLaw,
    A: FiniteSet,
    source,
    windows: tuple[int, ...] = (256, 512, 1024),
) -> HittingLaw:
    """Entrance law of a finite set from a point or from +-infinity.

    From +-infinity the probe point L/2 rides each window; the windowed
    masses are conditioned on hitting A before leaving the window (the
    unconditional deficit is O(1) there) and the conditional masses are
    extrapolated in 1/L.
    """
    if source in ("+inf", "-inf", math.inf, -math.inf):
        sgn = 1 if source in ("+inf", math.inf) else -1
        rows = []
        for L in windows:
            sys, sol = _finite_solutions(law, A, L)
            row = _value_rows(law, sys, sol, [sgn * (L // 2)], A)[0]
            tot = row.sum()
            if tot <= 0:
                raise ExtrapolationUnstable("probe point cannot reach the target set")
            rows.append(row / tot)
        stack = np.stack(rows)
        increments = np.abs(np.diff(stack, axis=0)).max(axis=1)
        if len(windows) >= 3 and increments[-1] > 4.0 * increments[-2] + 1e-12:
            raise ExtrapolationUnstable(
                f"window estimates diverge: increments {increments.tolist()}"
            )
        vals = richardson_in_inverse(stack, np.asarray(windows, float))
        masses = {
            s: float(np.clip(v, 0.0, 1.0)) for s, v in zip(A.sites, np.atleast_1d(vals))
        }
        deficit = 1.0 - sum(masses.values())
        label = "+inf" if sgn > 0 else "-inf"
        return HittingLaw(target=A, source=label, masses=masses, deficit=deficit)

    x = int(source)
    masses, deficits = hitting_finite_batch(law, A, [x], windows)
    out = {s: float(v) for s, v in zip(A.sites, masses[0])}
    law_out = HittingLaw(target=A, source=x, masses=out, deficit=float(deficits[0]))
    if abs(law_out.deficit) >= HITTING_DEFICIT_TOL:
        raise ExtrapolationUnstable(
            f"hitting deficit {law_out.deficit:.2e} after extrapolation"
        )
    return law_out
