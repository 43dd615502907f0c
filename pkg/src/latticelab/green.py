"""Green-function family for a finite killing set.

For a killing set A the bundle carries, over a range of sources x:

* ``u(x)``   escape potential: a+(x - xi0) - E_x[a(S at entrance - xi0)],
* ``w(x)``   antisymmetric part (x - E_x[S at entrance]) / sigma^2,
* ``g+-``    one-sided Green limits u +- w, harmonic for the killed walk,
* ``V+-``    the sets where g+- is strictly positive (reachability),
* ``C_A+``   sigma^2 times the limit of g- at +infinity, two ways,
* ``D_A+``   the hitting-weighted potential offset sum.

The pointwise Green table g_A(x, y) has two independent routes: the killed
march series and the potential-kernel formula through the hitting law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .absorption import HittingLaw, hitting_finite, hitting_finite_batch
from .errors import RoutesDisagree, XiNotInA, ZeroEscapeMass
from .kernel import FiniteSet, Window, default_window, killed_kernel
from .laws import IncrementLaw, reflect_law
from .potential import PotentialTable, green_punctured, potential_table
from .solver import AbsorptionSystem, aitken_limit, richardson_in_inverse

POSITIVITY_TOL = 1e-12
ROUTES_TOL = 1e-5

_BUNDLE_CACHE: dict = {}


# --------------------------------------------------------------------------
# reachability
# --------------------------------------------------------------------------


def _bfs_avoiding(law: IncrementLaw, A: FiniteSet, seeds, lo: int, hi: int, forward: bool):
    """Sites reachable from seeds through non-A intermediates within [lo, hi].

    forward=True follows steps x -> x + off; forward=False follows
    predecessors x -> x - off.  Seeds belong to the result even if in A.
    """
    ain = set(A.sites)
    seen = set(int(s) for s in seeds)
    frontier = [s for s in seen]
    offs = [o for o, _ in law.atoms]
    while frontier:
        nxt = []
        for z in frontier:
            if z in ain and z not in seeds:
                continue  # cannot pass through A
            for o in offs:
                t = z + o if forward else z - o
                if t < lo or t > hi or t in seen:
                    continue
                seen.add(t)
                nxt.append(t)
        frontier = nxt
    return seen


def reachable_avoiding(law: IncrementLaw, A: FiniteSet, x: int, y: int) -> bool:
    """Can the walk go from x to y with all intermediate sites off A?

    The endpoint y itself must be off A; x may be anywhere.
    """
    if x == y:
        return True
    span = 3 * max(law.max_up, law.max_down)
    lo = min(x, y, min(A.sites)) - span - 1
    hi = max(x, y, max(A.sites)) + span + 1
    # First hop may leave from a killing site; afterwards stay off A.
    starts = [x + o for o, _ in law.atoms if lo <= x + o <= hi and (x + o not in set(A.sites))]
    if y in starts:
        return True
    seen = _bfs_avoiding(law, A, starts, lo, hi, forward=True)
    return y in seen


def v_sets(law: IncrementLaw, A: FiniteSet) -> tuple[set, set, tuple[int, int]]:
    """V+ / V- within the clip window, plus the clip itself.

    Outside the clip membership follows the sign rule: every x >= r_A+ is in
    V+ and every x <= r_A- is in V-; deep on the other side membership
    matches the near edge of the clip.
    """
    span = 3 * max(law.max_up, law.max_down)
    lo = min(A.sites) - span
    hi = max(A.sites) + span
    rp, rm = A.r_plus, A.r_minus
    back_p = _bfs_avoiding(law, A, [rp], lo, hi, forward=False)
    back_m = _bfs_avoiding(law, A, [rm], lo, hi, forward=False)
    ain = set(A.sites)
    vp, vm = set(), set()
    for x in range(lo, hi + 1):
        if x >= rp:
            vp.add(x)
        elif x in back_p and x not in ain:
            vp.add(x)
        elif any((x + o) in back_p and (x + o) not in ain or (x + o) == rp for o, _ in law.atoms):
            vp.add(x)
        if x <= rm:
            vm.add(x)
        elif x in back_m and x not in ain:
            vm.add(x)
        elif any((x + o) in back_m and (x + o) not in ain or (x + o) == rm for o, _ in law.atoms):
            vm.add(x)
    return vp, vm, (lo, hi)


def in_v_plus(law: IncrementLaw, A: FiniteSet, x: int) -> bool:
    vp, _, (lo, hi) = v_sets(law, A)
    if lo <= x <= hi:
        return x in vp
    if x > hi:
        return True
    return any(s in vp for s in range(lo, lo + law.span + 1))


def in_v_minus(law: IncrementLaw, A: FiniteSet, x: int) -> bool:
    _, vm, (lo, hi) = v_sets(law, A)
    if lo <= x <= hi:
        return x in vm
    if x < lo:
        return True
    return any(s in vm for s in range(hi - law.span, hi + 1))


# --------------------------------------------------------------------------
# the bundle
# --------------------------------------------------------------------------


@dataclass
class GreenBundle:
    law: IncrementLaw
    A: FiniteSet
    xi0: int
    table: PotentialTable
    xs: np.ndarray
    u: np.ndarray
    w: np.ndarray
    g_plus: np.ndarray
    g_minus: np.ndarray
    hit_rows: np.ndarray  # (len(xs), |A|): H^x_A(xi)
    hit_deficits: np.ndarray
    hitting_plus_inf: HittingLaw
    hitting_minus_inf: HittingLaw
    C_plus: float  # C+ of the law (inf when divergent)
    C_A_plus: float  # via C+ - D_A+
    C_A_plus_tail: float  # independent route: sigma^2 * lim g-(x)
    D_A_plus: float
    divergent: bool

    def _ix(self, x: int) -> int:
        i = int(x) - int(self.xs[0])
        if not 0 <= i < self.xs.size:
            raise IndexError(f"x={x} outside bundle range [{self.xs[0]}, {self.xs[-1]}]")
        return i

    def u_at(self, x: int) -> float:
        return float(self.u[self._ix(x)])

    def w_at(self, x: int) -> float:
        return float(self.w[self._ix(x)])

    def g_plus_at(self, x: int) -> float:
        return float(self.g_plus[self._ix(x)])

    def g_minus_at(self, x: int) -> float:
        return float(self.g_minus[self._ix(x)])

    def hitting_row(self, x: int) -> dict[int, float]:
        return {s: float(v) for s, v in zip(self.A.sites, self.hit_rows[self._ix(x)])}

    def green_potential_route(self, x: int, y: int) -> float:
        """g_A(x, y) by the potential-kernel formula (route r2)."""
        row = self.hit_rows[self._ix(x)]
        xi0 = self.xi0
        val = (1.0 if x == xi0 else 0.0) + green_punctured(self.table, x - xi0, y - xi0)
        for s, h in zip(self.A.sites, row):
            val -= h * green_punctured(self.table, s - xi0, y - xi0)
        return val


def green_bundle(
    law: IncrementLaw,
    A: FiniteSet,
    range_: int,
    table: PotentialTable | None = None,
    xi0: int | None = None,
    windows: tuple[int, ...] | None = None,
) -> GreenBundle:
    """Assemble the bundle for sources |x| <= range_."""
    if xi0 is None:
        xi0 = A.sites[0]
    if xi0 not in A.sites:
        raise XiNotInA(f"xi0={xi0} not in A={A}")
    diam = max(A.sites) - min(A.sites)
    key = (law.atoms, A.sites, range_, xi0, windows, id(table) if table is not None else None)
    hit = _BUNDLE_CACHE.get(key)
    if hit is not None:
        return hit
    if table is None:
        table = potential_table(law, 2 * (range_ + diam) + abs(xi0) + 8)
    if windows is None:
        base = max(4 * range_, 256)
        windows = (base, 2 * base, 4 * base)

    xs = np.arange(-range_, range_ + 1, dtype=np.int64)
    rows, deficits = hitting_finite_batch(law, A, xs.tolist(), windows=windows)

    a_xi = np.array([table.a_of(s - xi0) for s in A.sites])
    sites = np.array(A.sites, dtype=np.float64)
    u = np.array(
        [table.a_dagger(int(x) - xi0) - float(rows[i] @ a_xi) for i, x in enumerate(xs)]
    )
    w = (xs.astype(np.float64) - rows @ sites) / law.sigma2
    g_plus = u + w
    g_minus = u - w
    # structural zeros: clamp solver dust where no path exists
    for i, x in enumerate(xs):
        if not in_v_plus(law, A, int(x)) and abs(g_plus[i]) < 1e-8:
            g_plus[i] = 0.0
        if not in_v_minus(law, A, int(x)) and abs(g_minus[i]) < 1e-8:
            g_minus[i] = 0.0

    h_pinf = hitting_finite(law, A, "+inf", windows=windows)
    h_minf = hitting_finite(law, A, "-inf", windows=windows)

    lam_tail = [law.sigma2 * table.a_of(x) - x for x in range(table.xmax - 3, table.xmax + 1)]
    growth = lam_tail[-1] - lam_tail[0]
    probe = law.sigma2 * table.a_of(table.xmax // 2) - table.xmax // 2
    divergent = lam_tail[-1] - probe > max(1e-7 * law.sigma2, 8.0 * float(table.err_est.max()))
    C_plus = math.inf if divergent else aitken_limit(*lam_tail[1:])
    D_A_plus = float(
        sum(
            h_pinf.masses.get(s, 0.0) * (law.sigma2 * table.a_of(s - xi0) - (s - xi0))
            for s in A.sites
        )
    )
    C_A_plus = C_plus - D_A_plus if not divergent else math.inf
    # independent tail route: sigma^2 g-(x) along the right edge of the range
    gm = {int(x): float(g_minus[i]) for i, x in enumerate(xs)}
    xr = int(xs[-1])
    if all(gm.get(xr - j) is not None for j in range(3)):
        C_A_tail = law.sigma2 * aitken_limit(gm[xr - 2], gm[xr - 1], gm[xr])
    else:  # pragma: no cover
        C_A_tail = math.nan

    out = GreenBundle(
        law=law,
        A=A,
        xi0=xi0,
        table=table,
        xs=xs,
        u=u,
        w=w,
        g_plus=g_plus,
        g_minus=g_minus,
        hit_rows=rows,
        hit_deficits=deficits,
        hitting_plus_inf=h_pinf,
        hitting_minus_inf=h_minf,
        C_plus=C_plus,
        C_A_plus=C_A_plus,
        C_A_plus_tail=C_A_tail,
        D_A_plus=D_A_plus,
        divergent=divergent,
    )
    _BUNDLE_CACHE[key] = out
    return out


# --------------------------------------------------------------------------
# series route for g_A and the two-route check
# --------------------------------------------------------------------------


def green_series(
    law: IncrementLaw,
    A: FiniteSet,
    x: int,
    ys,
    horizon: int = 8192,
    backend=None,
) -> dict[int, float]:
    """g_A(x, y) = sum_n p_A^n(x, y) with tail extrapolation in n**-1/2."""
    ys = sorted(set(int(y) for y in ys))
    nu = law.period
    N = ((horizon + 4 * nu - 1) // (4 * nu)) * 4 * nu
    ev = killed_kernel(law, A, x, N, record_sites=ys, backend=backend)
    rec = ev.recorded  # (N+1, len(ys))
    cums = np.cumsum(rec, axis=0)
    checkpoints = [N // 4, N // 2, N]
    vals = []
    for Nk in checkpoints:
        block = cums[Nk - nu + 1 : Nk + 1, :]
        vals.append(block.mean(axis=0))
    t = np.array([c**-0.5 for c in checkpoints])
    V = np.vander(t, 3, increasing=True)
    coef = np.linalg.solve(V, np.stack(vals))
    return {y: float(v) for y, v in zip(ys, coef[0])}


def green_two_routes(
    bundle: GreenBundle, x: int, ys, horizon: int = 8192, backend=None
) -> tuple[dict[int, float], dict[int, float], float]:
    """(series route, potential route, worst relative disagreement)."""
    series = green_series(bundle.law, bundle.A, x, ys, horizon=horizon, backend=backend)
    pot = {y: bundle.green_potential_route(x, y) for y in series}
    worst = 0.0
    for y in series:
        scale = max(abs(pot[y]), 1.0)
        worst = max(worst, abs(series[y] - pot[y]) / scale)
    if worst > ROUTES_TOL:
        raise RoutesDisagree(f"green routes disagree by {worst:.2e} (rel) from x={x}")
    return series, pot, worst


# --------------------------------------------------------------------------
# condition (reachability) check
# --------------------------------------------------------------------------


@dataclass
class ConditionVerdict:
    satisfied: bool
    case: str  # 'generic' | 'c1_unreachable' | 'c2_confined'
    value: float


def condition_check(
    bundle: GreenBundle, dual_bundle: GreenBundle, x: int, y: int
) -> ConditionVerdict:
    """Evaluate g+(x) g-^(dual)(-y) + g-(x) g+^(dual)(-y) and classify zeros.

    The dual bundle is the bundle of -A under the reflected law.  When the
    value vanishes, either no path from x reaches y off A at all (c1), or
    every such path is confined near A and dies quickly (c2).
    """
    val = bundle.g_plus_at(x) * dual_bundle.g_minus_at(-y) + bundle.g_minus_at(
        x
    ) * dual_bundle.g_plus_at(-y)
    if val > POSITIVITY_TOL:
        return ConditionVerdict(True, "generic", float(val))
    if not reachable_avoiding(bundle.law, bundle.A, x, y):
        return ConditionVerdict(False, "c1_unreachable", 0.0)
    return ConditionVerdict(False, "c2_confined", 0.0)


# --------------------------------------------------------------------------
# escape probabilities and overshoot
# --------------------------------------------------------------------------


@dataclass
class EscapeResult:
    p_right: float
    p_right_first_exit: float
    p_left: float
    p_both_exact: float


def _first_exit_system(law: IncrementLaw, A: FiniteSet, R: int):
    lo = -R - law.max_down
    hi = R + law.max_up
    killed = list(A.sites) + list(range(R, hi + 1)) + list(range(lo, -R + 1))
    return AbsorptionSystem(law, lo, hi, killed)


def _one_sided_p(law, A, R, x, side: str, windows_mult=(4, 8, 16)):
    """P_x[enter the right (or left) far region before A], truncation
    extrapolated on the opposite side."""
    vals = []
    for m in windows_mult:
        W = m * R
        if side == "right":
            sys = AbsorptionSystem(
                law,
                -W,
                R + law.max_up,
                list(A.sites) + list(range(R, R + law.max_up + 1)),
            )
            target = sys.target_indicator(lambda c: c >= R)
        else:
            sys = AbsorptionSystem(
                law,
                -R - law.max_down,
                W,
                list(A.sites) + list(range(-R - law.max_down, -R + 1)),
            )
            target = sys.target_indicator(lambda c: c <= -R)
        sol = sys.solve(target[None, :])[:, 0]
        vals.append([_value_at(law, sys, sol, target, x)])
    return float(
        np.clip(richardson_in_inverse(np.array(vals), np.array(windows_mult, float) * R), 0, 1)
    )


def _value_at(law, sys, sol, target, x):
    """Solution value at x, one-step unrolled if x is not a live site."""
    live = set(int(s) for s in sys.live_sites)
    if int(x) in live:
        return float(sys.values_at(sol, [int(x)])[0])
    val = 0.0
    for off, p in law.atoms:
        z = int(x) + off
        if z in live:
            val += p * float(sys.values_at(sol, [z])[0])
        elif sys.ext_lo <= z <= sys.ext_hi:
            val += p * float(target[z - sys.ext_lo])
    return val


def escape_prob(law: IncrementLaw, A: FiniteSet, x: int, R: int) -> EscapeResult:
    """Escape functionals at scale R (infinite-horizon absorption values).

    p_right counts every path entering [R, inf) before A (left excursions
    allowed; computed with opposite-side truncation extrapolated away);
    p_right_first_exit additionally requires the first exit from the window
    to be rightward; p_both_exact is the probability the walk leaves
    (-R, R) before entering A.
    """
    if abs(x) >= R:
        raise ValueError("need |x| < R")
    if A.r_plus - 1 >= R or A.r_minus + 1 <= -R:
        raise ValueError("A must sit inside the escape window")
    sys = _first_exit_system(law, A, R)
    t_right = sys.target_indicator(lambda c: c >= R)
    t_left = sys.target_indicator(lambda c: c <= -R)
    sol = sys.solve(np.stack([t_right, t_left]))
    p_rfe = _value_at(law, sys, sol[:, 0], t_right, x)
    p_lfe = _value_at(law, sys, sol[:, 1], t_left, x)
    p_right = _one_sided_p(law, A, R, x, "right")
    p_left = _one_sided_p(law, A, R, x, "left")
    return EscapeResult(
        p_right=max(p_right, p_rfe),
        p_right_first_exit=float(p_rfe),
        p_left=max(p_left, p_lfe),
        p_both_exact=float(p_rfe + p_lfe),
    )


@dataclass
class OvershootResult:
    mean_overshoot_given_escape: float
    overshoot_over_R: float
    bound_check: float  # E_x[S; escape] - upper bound; should be <= 0


def overshoot_stats(
    law: IncrementLaw,
    A: FiniteSet,
    x: int,
    R: int,
    table: PotentialTable | None = None,
) -> OvershootResult:
    """Mean overshoot over R on escape, plus the harmonic upper-bound check."""
    if table is None:
        table = potential_table(law, max(abs(x), max(abs(s) for s in A.sites)) + 8)
    W = 8 * R
    sys = AbsorptionSystem(
        law, -W, R + law.max_up, list(A.sites) + list(range(R, R + law.max_up + 1))
    )
    t_ind = sys.target_indicator(lambda c: c >= R)
    t_over = sys.target_weights(lambda c: np.where(c >= R, (c - R).astype(float), 0.0))
    t_pos = sys.target_weights(lambda c: np.where(c >= R, c.astype(float), 0.0))
    sol = sys.solve(np.stack([t_ind, t_over, t_pos]))
    p_esc = _value_at(law, sys, sol[:, 0], t_ind, x)
    if p_esc <= 0.0:
        raise ZeroEscapeMass(f"no escape mass from x={x} at R={R}")
    e_over = _value_at(law, sys, sol[:, 1], t_over, x)
    e_pos = _value_at(law, sys, sol[:, 2], t_pos, x)
    xi0 = A.sites[0]
    c_A = 0.5 * law.sigma2 + 0.5 * max(
        law.sigma2 * table.a_of(s - xi0) + (s - xi0) for s in A.sites
    )
    bound = e_pos - 0.5 * (law.sigma2 * table.a_of(x - xi0) + (x - xi0)) - c_A
    mean_over = e_over / p_esc
    return OvershootResult(
        mean_overshoot_given_escape=float(mean_over),
        overshoot_over_R=float(mean_over / R),
        bound_check=float(bound),
    )
