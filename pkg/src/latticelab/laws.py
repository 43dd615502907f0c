"""Increment distributions for one-dimensional lattice walks.

A law is a finite list of ``(offset, probability)`` atoms on the integers,
normalized, with zero mean and two-sided support whose absolute offsets are
coprime.  Construction validates all of that and derives the variance, the
temporal period (gcd of the possible return times to the origin) and the
skip-free flags:

* ``left_continuous``  -- no downward jump of size two or more,
* ``right_continuous`` -- no upward jump of size two or more.

Laws are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    InfeasibleRecentering,
    LawError,
    NonzeroMean,
    NoReturnFound,
    NotNormalized,
    OneSidedSupport,
    Reducible,
)

MASS_TOL = 1e-12
MEAN_TOL = 1e-12

# Hard cap on the horizon scanned for return times when deriving the period.
PERIOD_HORIZON = 512
# The running gcd must survive this many consecutive returns before we stop.
PERIOD_STABLE_RETURNS = 8


@dataclass(frozen=True)
class IncrementLaw:
    """Validated step distribution of a zero-mean lattice walk."""

    atoms: tuple[tuple[int, float], ...]
    sigma2: float
    mean_residual: float
    period: int
    left_continuous: bool
    right_continuous: bool
    support_gcd: int
    meta: tuple[tuple[str, float], ...] = field(default=())

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([o for o, _ in self.atoms], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=np.float64)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def max_up(self) -> int:
        return int(self.offsets.max())

    @property
    def max_down(self) -> int:
        return int(-self.offsets.min())

    @property
    def span(self) -> int:
        return self.max_up + self.max_down

    def prob_of(self, offset: int) -> float:
        """p(offset), zero off the support."""
        for o, p in self.atoms:
            if o == offset:
                return p
        return 0.0

    def cdf(self, t: int) -> float:
        """P[X <= t]."""
        return float(sum(p for o, p in self.atoms if o <= t))

    def charfn(self, theta: np.ndarray) -> np.ndarray:
        """Characteristic function E[exp(i*theta*X)] on an array of angles."""
        return np.exp(1j * np.multiply.outer(theta, self.offsets)) @ self.probs.astype(complex)

    def to_json(self) -> str:
        doc = {"atoms": [[int(o), float(p)] for o, p in self.atoms]}
        if self.meta:
            doc["meta"] = dict(self.meta)
        return json.dumps(doc)

    def describe(self) -> str:
        flags = []
        if self.left_continuous:
            flags.append("left-continuous")
        if self.right_continuous:
            flags.append("right-continuous")
        return (
            f"IncrementLaw(n_atoms={len(self.atoms)}, sigma2={self.sigma2:.6g}, "
            f"period={self.period}{', ' + ', '.join(flags) if flags else ''})"
        )


def build_law(atoms, meta: dict | None = None) -> IncrementLaw:
    """Validate raw atoms and assemble an :class:`IncrementLaw`.

    Raises :class:`NotNormalized`, :class:`NonzeroMean`,
    :class:`OneSidedSupport` or :class:`Reducible` when the input violates
    the corresponding invariant.
    """
    atoms = [(int(o), float(p)) for o, p in atoms]
    if not atoms:
        raise LawError("empty atom list")
    offsets = [o for o, _ in atoms]
    if len(set(offsets)) != len(offsets):
        raise LawError("duplicate offsets")
    if any(p <= 0.0 for _, p in atoms):
        raise LawError("all probabilities must be positive")
    atoms.sort()

    total = math.fsum(p for _, p in atoms)
    if abs(total - 1.0) > MASS_TOL:
        raise NotNormalized(f"probabilities sum to {total!r}")
    mean = math.fsum(o * p for o, p in atoms)
    if abs(mean) > MEAN_TOL:
        raise NonzeroMean(f"mean is {mean!r}")
    if not any(o > 0 for o, _ in atoms) or not any(o < 0 for o, _ in atoms):
        raise OneSidedSupport("support must contain positive and negative offsets")
    g = 0
    for o, _ in atoms:
        g = math.gcd(g, abs(o))
    if g != 1:
        raise Reducible(f"gcd of |offsets| is {g}")

    sigma2 = math.fsum(o * o * p for o, p in atoms)
    left_cont = all(o >= -1 for o, _ in atoms)
    right_cont = all(o <= 1 for o, _ in atoms)
    nu = _period_by_dp(atoms)
    return IncrementLaw(
        atoms=tuple(atoms),
        sigma2=sigma2,
        mean_residual=abs(mean),
        period=nu,
        left_continuous=left_cont,
        right_continuous=right_cont,
        support_gcd=g,
        meta=tuple(sorted((meta or {}).items())),
    )


def _period_by_dp(atoms) -> int:
    """gcd of return times to the origin, found by boolean reachability.

    A multiset of steps with zero sum can always be reordered so the partial
    sums stay inside [-max_down, max_up], so clipping the reachable-set DP to
    that band loses no return time.
    """
    offsets = [o for o, _ in atoms]
    lo = min(min(offsets), 0) - 1
    hi = max(max(offsets), 0) + 1
    width = hi - lo + 1
    reach = np.zeros(width, dtype=bool)
    reach[-lo] = True  # origin
    shifted = np.zeros(width, dtype=bool)

    g = 0
    stable = 0
    for n in range(1, PERIOD_HORIZON + 1):
        nxt = np.zeros(width, dtype=bool)
        for o in offsets:
            if o >= 0:
                shifted[:] = False
                shifted[o:] = reach[: width - o]
            else:
                shifted[:] = False
                shifted[: width + o] = reach[-o:]
            nxt |= shifted
        reach = nxt
        if reach[-lo]:
            new_g = math.gcd(g, n)
            stable = stable + 1 if new_g == g else 0
            g = new_g
            if stable >= PERIOD_STABLE_RETURNS:
                return g
    if g == 0:
        raise NoReturnFound(f"no return to 0 within {PERIOD_HORIZON} steps")
    return g


def period(law: IncrementLaw) -> int:
    """Temporal period of the walk (precomputed at construction)."""
    return law.period


def reflect_law(law: IncrementLaw) -> IncrementLaw:
    """Law of -X.  Involution; swaps the two continuity flags."""
    return build_law([(-o, p) for o, p in law.atoms], meta=dict(law.meta))


def heavy_tail_family(beta: float, cutoff: int) -> IncrementLaw:
    """Truncated power-law test family with two recentering atoms.

    The negative side carries total mass 1/3 distributed as
    ``P[X=-w] = c * w**(-beta)`` for ``2 <= w <= cutoff``; atoms at +1 and +2
    absorb the remaining mass and recenter the mean to zero exactly.  The
    linear system for the two positive masses is solved in extended precision
    and rounded once; if it yields a nonpositive mass the construction fails
    rather than renormalizing.
    """
    if not 3.0 < beta <= 4.0:
        raise LawError(f"beta must lie in (3, 4], got {beta}")
    if cutoff < 8:
        raise LawError(f"cutoff must be >= 8, got {cutoff}")
    w = np.arange(2, cutoff + 1, dtype=np.longdouble)
    tail = w ** np.longdouble(-beta)
    s0 = tail.sum()
    c = np.longdouble(1.0) / (3 * s0)
    neg_mass = c * tail  # sums to 1/3
    m1 = float((neg_mass * w).sum())  # E[-X; X<0]
    # q1 + q2 = 2/3 and q1 + 2*q2 = m1
    q2 = np.longdouble(m1) - np.longdouble(2.0) / 3
    q1 = np.longdouble(4.0) / 3 - np.longdouble(m1)
    if q1 <= 0 or q2 <= 0:
        raise InfeasibleRecentering(
            f"recentering atoms infeasible for beta={beta}, cutoff={cutoff}"
        )
    atoms = [(-int(wi), float(pi)) for wi, pi in zip(w, neg_mass)]
    atoms += [(1, float(q1)), (2, float(q2))]
    # Exactness guard: push any residual rounding into the largest atom.
    resid = math.fsum(p for _, p in atoms) - 1.0
    if abs(resid) > 1e-17:
        j = max(range(len(atoms)), key=lambda i: atoms[i][1])
        atoms[j] = (atoms[j][0], atoms[j][1] - resid)
    return build_law(atoms, meta={"beta": beta, "cutoff": cutoff})


def law_from_json(text: str) -> IncrementLaw:
    doc = json.loads(text)
    if not isinstance(doc, dict) or "atoms" not in doc:
        raise LawError("expected a JSON object with an 'atoms' field")
    return build_law(doc["atoms"], meta=doc.get("meta"))


def simple_walk() -> IncrementLaw:
    """The +-1 symmetric walk."""
    return build_law([(-1, 0.5), (1, 0.5)])


def bench_walk() -> IncrementLaw:
    """The right-continuous workhorse {(-2, 1/3), (+1, 2/3)}."""
    return build_law([(-2, 1.0 / 3.0), (1, 2.0 / 3.0)])
