"""Exact n-step and killed transition kernels by windowed dynamic programming.

The state of a march is a dense mass vector over a lattice window.  Each
step convolves with the step law; mass landing on killing sites moves into a
per-step entrance ledger, mass leaving the window accumulates as a far-field
leak that is reported, never renormalized.  Slice ``k`` of the live mass is
exactly the killed kernel ``p_A^k(x, .)`` restricted to the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import backends
from .errors import WindowTooSmall
from .laws import IncrementLaw

LEAK_HARD_LIMIT = 1e-8
WINDOW_SIGMA_FACTOR = 12.0


@dataclass(frozen=True)
class Window:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo >= self.hi:
            raise ValueError(f"degenerate window [{self.lo}, {self.hi}]")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def index(self, site: int) -> int:
        if site < self.lo or site > self.hi:
            raise IndexError(f"site {site} outside window [{self.lo}, {self.hi}]")
        return site - self.lo

    def contains(self, site: int) -> bool:
        return self.lo <= site <= self.hi

    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)


@dataclass(frozen=True)
class FiniteSet:
    sites: tuple[int, ...]

    def __post_init__(self):
        if not self.sites:
            raise ValueError("killing set must be nonempty")
        object.__setattr__(self, "sites", tuple(sorted(set(int(s) for s in self.sites))))

    @property
    def r_plus(self) -> int:
        return 1 + max(self.sites)

    @property
    def r_minus(self) -> int:
        return -1 + min(self.sites)

    def reflected(self) -> "FiniteSet":
        return FiniteSet(tuple(-s for s in self.sites))

    def __str__(self):
        return "{" + ",".join(str(s) for s in self.sites) + "}"


@dataclass(frozen=True)
class HalfLineLeft:
    """Kills every site x <= boundary."""

    boundary: int

    def __str__(self):
        return f"(-inf,{self.boundary}]"


KillingSet = FiniteSet | HalfLineLeft


def default_window(law: IncrementLaw, n: int, extent: int = 0) -> Window:
    """Window wide enough that the n-step leak is far below 1e-10."""
    half = int(math.ceil(WINDOW_SIGMA_FACTOR * law.sigma * math.sqrt(max(n, 1))))
    half = max(half, abs(extent)) + 2 * max(law.max_up, law.max_down)
    return Window(-half, half)


@dataclass
class Pmf:
    """n-step distribution of the unkilled walk on a window."""

    law: IncrementLaw
    step_count: int
    window: Window
    table: np.ndarray  # mass over window sites
    leak: float
    recorded: np.ndarray | None = None  # (n+1, len(record_sites))
    record_sites: np.ndarray | None = None

    def mass_at(self, site: int) -> float:
        return float(self.table[self.window.index(site)]) if self.window.contains(site) else 0.0


@dataclass
class KilledEvolution:
    """Time-marched killed walk with absorption ledgers."""

    law: IncrementLaw
    killing: KillingSet
    source: int
    step_count: int
    window: Window
    live: np.ndarray  # final slice p_A^n(x, .)
    ledger_sites: np.ndarray  # entrance sites (columns of ledger)
    entrance_ledger: np.ndarray  # (n+1, S); row k = P_x[sigma=k, S_k=xi]
    far_field_leak: float
    recorded: np.ndarray | None = None  # (n+1, R): p_A^k(x, site) after killing
    record_sites: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    def live_at(self, site: int) -> float:
        return float(self.live[self.window.index(site)]) if self.window.contains(site) else 0.0

    def recorded_at(self, site: int) -> np.ndarray:
        if self.record_sites is None:
            raise ValueError("no sites were recorded for this evolution")
        idx = np.nonzero(self.record_sites == site)[0]
        if idx.size == 0:
            raise ValueError(f"site {site} was not recorded")
        return self.recorded[:, idx[0]]

    def survival(self) -> float:
        return float(self.live.sum())

    def mass_check(self) -> float:
        """|live + ledgered + leaked - 1|; conservation residual."""
        total = self.survival() + float(self.entrance_ledger.sum()) + self.far_field_leak
        return abs(total - 1.0)


def _entrance_sites(law: IncrementLaw, killing: KillingSet) -> np.ndarray:
    if isinstance(killing, FiniteSet):
        return np.asarray(killing.sites, dtype=np.int64)
    b = killing.boundary
    return np.arange(b - law.max_down + 1, b + 1, dtype=np.int64)


def _march(law, killing, x, n, window, record_sites, snapshot_steps, backend):
    if isinstance(killing, HalfLineLeft) and x <= killing.boundary:
        raise ValueError("half-line marches require a source strictly above the boundary")
    if window is None:
        extent = abs(x)
        if isinstance(killing, FiniteSet):
            extent = max(extent, abs(killing.r_plus), abs(killing.r_minus))
        else:
            extent = max(extent, abs(killing.boundary) + law.max_down + 1)
        if record_sites is not None and len(record_sites):
            extent = max(extent, int(np.abs(np.asarray(record_sites)).max()))
        window = default_window(law, n, extent)
    if isinstance(killing, HalfLineLeft):
        # Live sites stay above the boundary, so nothing ever lands below the
        # one-jump entrance strip; clamp the window there to keep arrays small.
        strip_lo = killing.boundary - law.max_down + 1
        if window.lo < strip_lo:
            window = Window(strip_lo, window.hi)
        elif window.lo > strip_lo:
            raise ValueError("window must contain the half-line entrance strip")
    if not window.contains(x):
        raise ValueError(f"source {x} outside window [{window.lo}, {window.hi}]")

    if isinstance(killing, FiniteSet):
        if killing.r_minus + 1 <= window.lo or killing.r_plus - 1 >= window.hi:
            raise ValueError("killing sites must lie strictly inside the window")
        kill_sites = np.asarray(killing.sites, dtype=np.int64)
    else:
        b = killing.boundary
        kill_sites = np.arange(b - law.max_down + 1, b + 1, dtype=np.int64)

    mass = np.zeros(window.width, dtype=np.float64)
    mass[window.index(x)] = 1.0

    kill_idx = (kill_sites - window.lo).astype(np.int64)
    ledger = np.zeros((n + 1, kill_idx.size), dtype=np.float64)
    if record_sites is not None and len(record_sites):
        rec_sites = np.asarray(sorted(set(int(s) for s in record_sites)), dtype=np.int64)
        rec_idx = (rec_sites - window.lo).astype(np.int64)
        if rec_idx.min() < 0 or rec_idx.max() >= window.width:
            raise ValueError("record sites must lie inside the window")
        rec = np.zeros((n + 1, rec_idx.size), dtype=np.float64)
        rec[0, :] = mass[rec_idx]
    else:
        rec_sites = None
        rec_idx = np.zeros(0, dtype=np.int64)
        rec = np.zeros((n + 1, 0), dtype=np.float64)
    if snapshot_steps:
        snap_steps = np.asarray(sorted(set(int(s) for s in snapshot_steps)), dtype=np.int64)
        snaps = np.zeros((snap_steps.size, window.width), dtype=np.float64)
    else:
        snap_steps = np.zeros(0, dtype=np.int64)
        snaps = np.zeros((0, window.width), dtype=np.float64)

    final, leak = backends.run_march(
        mass,
        law.probs,
        law.offsets.astype(np.int64),
        n,
        kill_idx,
        ledger,
        rec_idx,
        rec,
        snap_steps,
        snaps,
        backend=backend,
    )
    if leak > LEAK_HARD_LIMIT:
        raise WindowTooSmall(
            f"far-field leak {leak:.3e} exceeds {LEAK_HARD_LIMIT:.0e}; widen the window"
        )
    snapshots = {int(s): snaps[i].copy() for i, s in enumerate(snap_steps)}
    return window, final, kill_sites, ledger, leak, rec_sites, rec, snapshots


def nstep_pmf(
    law: IncrementLaw,
    n: int,
    window: Window | None = None,
    record_sites=None,
    backend: str | None = None,
) -> Pmf:
    """Distribution of S_n via iterated sparse convolution on a window."""
    if n < 1:
        raise ValueError("n must be positive")
    if window is None and record_sites is not None and len(record_sites):
        extent = int(np.abs(np.asarray(record_sites)).max())
        window = default_window(law, n, extent)
    elif window is None:
        window = default_window(law, n, 0)
    mass = np.zeros(window.width, dtype=np.float64)
    mass[window.index(0)] = 1.0
    kill_idx = np.zeros(0, dtype=np.int64)
    ledger = np.zeros((n + 1, 0), dtype=np.float64)
    if record_sites is not None and len(record_sites):
        rec_sites = np.asarray(sorted(set(int(s) for s in record_sites)), dtype=np.int64)
        rec_idx = (rec_sites - window.lo).astype(np.int64)
        rec = np.zeros((n + 1, rec_idx.size), dtype=np.float64)
        rec[0, :] = mass[rec_idx]
    else:
        rec_sites = None
        rec_idx = np.zeros(0, dtype=np.int64)
        rec = np.zeros((n + 1, 0), dtype=np.float64)
    snap_steps = np.zeros(0, dtype=np.int64)
    snaps = np.zeros((0, window.width), dtype=np.float64)
    final, leak = backends.run_march(
        mass,
        law.probs,
        law.offsets.astype(np.int64),
        n,
        kill_idx,
        ledger,
        rec_idx,
        rec,
        snap_steps,
        snaps,
        backend=backend,
    )
    if leak > LEAK_HARD_LIMIT:
        raise WindowTooSmall(f"far-field leak {leak:.3e}; widen the window")
    return Pmf(
        law=law,
        step_count=n,
        window=window,
        table=final,
        leak=leak,
        recorded=rec if rec_sites is not None else None,
        record_sites=rec_sites,
    )


def killed_kernel(
    law: IncrementLaw,
    killing: KillingSet,
    x: int,
    n: int,
    window: Window | None = None,
    record_sites=None,
    snapshot_steps=None,
    backend: str | None = None,
) -> KilledEvolution:
    """March the killed walk from x for n steps."""
    if n < 1:
        raise ValueError("n must be positive")
    window, final, kill_sites, ledger, leak, rec_sites, rec, snapshots = _march(
        law, killing, x, n, window, record_sites, snapshot_steps, backend
    )
    return KilledEvolution(
        law=law,
        killing=killing,
        source=x,
        step_count=n,
        window=window,
        live=final,
        ledger_sites=kill_sites,
        entrance_ledger=ledger,
        far_field_leak=leak,
        recorded=rec if rec_sites is not None else None,
        record_sites=rec_sites,
        snapshots=snapshots,
    )


@dataclass
class EntranceLaw:
    hitting_time_law: np.ndarray  # index k -> P_x[sigma = k], k = 0..n
    hitting_site_law: dict[int, float]
    joint: np.ndarray  # (n+1, S)
    sites: np.ndarray
    live_mass: float
    leak: float

    def total(self) -> float:
        return float(self.joint.sum()) + self.live_mass + self.leak


def entrance_spacetime(evolution: KilledEvolution) -> EntranceLaw:
    """Marginals and joint of (entrance time, entrance site)."""
    joint = evolution.entrance_ledger
    time_law = joint.sum(axis=1)
    site_law = {
        int(s): float(joint[:, j].sum()) for j, s in enumerate(evolution.ledger_sites)
    }
    return EntranceLaw(
        hitting_time_law=time_law,
        hitting_site_law=site_law,
        joint=joint,
        sites=evolution.ledger_sites,
        live_mass=evolution.survival(),
        leak=evolution.far_field_leak,
    )


def gauss_density(law: IncrementLaw, n: int, x) -> np.ndarray | float:
    """Gaussian comparison density g_n(x) = exp(-x^2/(2 sigma^2 n)) / sqrt(2 pi sigma^2 n)."""
    x = np.asarray(x, dtype=np.float64)
    s2n = law.sigma2 * n
    out = np.exp(-(x * x) / (2.0 * s2n)) / math.sqrt(2.0 * math.pi * s2n)
    return float(out) if out.ndim == 0 else out


def gauss_lclt(law: IncrementLaw, n: int, window: Window | None = None, backend=None):
    """Local-limit comparison: returns (sites, nu*g_n table, sup scaled error).

    The error is sup over reachable x of |p^n(x) - nu g_n(x)| * (n v x^2)/sqrt(n),
    which the limit theorem sends to zero.
    """
    pmf = nstep_pmf(law, n, window=window, backend=backend)
    sites = pmf.window.sites()
    gtab = law.period * gauss_density(law, n, sites)
    mask = pmf.table > 0.0
    x = sites[mask].astype(np.float64)
    scale = np.maximum(float(n), x * x) / math.sqrt(n)
    err = np.abs(pmf.table[mask] - gtab[mask]) * scale
    return sites, gtab, float(err.max() if err.size else 0.0)


# --------------------------------------------------------------------------
# admissibility: p^n(d) > 0
# --------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _admissible_profile(atoms: tuple, d: int, horizon: int) -> tuple[int, int, int]:
    """Return (n_min, residue, nu) such that p^n(d) > 0 iff n >= n_min and
    n == residue (mod nu), determined by boolean reachability.

    Paths may be clipped to a window of one span around [min(0,d), max(0,d)]:
    any multiset of steps summing to d can be reordered to stay there.
    """
    offsets = [o for o, _ in atoms]
    span = max(offsets) - min(offsets)
    lo = min(0, d) - span - 1
    hi = max(0, d) + span + 1
    width = hi - lo + 1
    reach = np.zeros(width, dtype=bool)
    reach[-lo] = True
    hits = []
    for n in range(1, horizon + 1):
        nxt = np.zeros(width, dtype=bool)
        for o in offsets:
            if o >= 0:
                nxt[o:] |= reach[: width - o]
            else:
                nxt[: width + o] |= reach[-o:]
        reach = nxt
        if reach[d - lo]:
            hits.append(n)
            if len(hits) >= 8:
                break
    if not hits:
        raise ValueError(f"displacement {d} unreachable within {horizon} steps")
    gaps = {hits[i + 1] - hits[i] for i in range(len(hits) - 1)}
    nu = math.gcd(*gaps) if gaps else 1
    return hits[0], hits[0] % max(nu, 1), max(nu, 1)


def admissible(law: IncrementLaw, d: int, n: int) -> bool:
    """True iff p^n(d) > 0."""
    horizon = max(4 * (abs(d) + law.span + 2) * law.period, 64)
    n_min, residue, nu = _admissible_profile(law.atoms, int(d), horizon)
    return n >= n_min and n % nu == residue


def next_admissible(law: IncrementLaw, d: int, n: int) -> int:
    """Smallest admissible m >= n for displacement d."""
    horizon = max(4 * (abs(d) + law.span + 2) * law.period, 64)
    n_min, residue, nu = _admissible_profile(law.atoms, int(d), horizon)
    m = max(n, n_min)
    m += (residue - m) % nu
    return m
