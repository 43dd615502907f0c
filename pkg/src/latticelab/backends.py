"""Hot numerical kernels: windowed DP marches and Monte Carlo cores.

Every kernel exists twice with identical semantics: a numba ``@njit``
version and a pure-numpy fallback.  The active implementation is chosen per
call: an explicit ``backend=`` argument wins, otherwise the
``LATTICE_LAB_FORCE_NUMPY`` environment variable forces numpy, otherwise
numba is used when importable.  Laws with very wide support additionally get
an FFT (overlap-add) convolution path, since the direct inner loop scales
with the number of atoms.

The Monte Carlo core uses a splitmix64 stream per trial, so results are
bit-identical no matter how trials are partitioned across workers or which
backend runs them.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import oaconvolve

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on broken installs
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


# Direct convolution is O(W * n_atoms) per step; beyond this many atoms the
# overlap-add FFT path wins.
WIDE_LAW_ATOMS = 24


def _env_force_numpy() -> bool:
    return os.environ.get("LATTICE_LAB_FORCE_NUMPY", "").strip().lower() not in (
        "",
        "0",
        "false",
        "no",
    )


def resolve_backend(backend: str | None = None, n_atoms: int = 1) -> str:
    """Pick 'numba', 'numpy' or 'fft' for a march."""
    if backend is not None:
        if backend not in ("numba", "numpy", "fft"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "numba" and (not HAS_NUMBA or _env_force_numpy()):
            return "numpy"
        return backend
    if n_atoms > WIDE_LAW_ATOMS:
        return "fft"
    if HAS_NUMBA and not _env_force_numpy():
        return "numba"
    return "numpy"


# --------------------------------------------------------------------------
# windowed march
# --------------------------------------------------------------------------
#
# State: mass vector over a window of W contiguous sites.  One step is a
# sparse convolution with the step law; mass leaving the window accumulates
# into `leak`, mass landing on a killing site at step k is moved to
# ledger[k, :] and zeroed.  rec[k, j] records the live mass at selected
# sites after killing (rows 0..n; row 0 is the initial vector).


@njit(cache=True, nogil=True)
def _march_numba(cur, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps):
    W = cur.size
    nxt = np.zeros(W, dtype=np.float64)
    leak = 0.0
    si = 0
    for k in range(1, nsteps + 1):
        for i in range(W):
            nxt[i] = 0.0
        for j in range(shifts.size):
            sh = shifts[j]
            p = pvals[j]
            if sh >= 0:
                for i in range(W - sh):
                    nxt[i + sh] += p * cur[i]
                for i in range(W - sh, W):
                    leak += p * cur[i]
            else:
                for i in range(-sh, W):
                    nxt[i + sh] += p * cur[i]
                for i in range(-sh):
                    leak += p * cur[i]
        for s in range(kill_idx.size):
            idx = kill_idx[s]
            ledger[k, s] = nxt[idx]
            nxt[idx] = 0.0
        for j in range(rec_idx.size):
            rec[k, j] = nxt[rec_idx[j]]
        if si < snap_steps.size and snap_steps[si] == k:
            snaps[si, :] = nxt
            si += 1
        tmp = cur
        cur = nxt
        nxt = tmp
    return cur, leak


def _march_numpy(cur, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps):
    W = cur.size
    nxt = np.zeros(W, dtype=np.float64)
    leak = 0.0
    si = 0
    for k in range(1, nsteps + 1):
        nxt[:] = 0.0
        for sh, p in zip(shifts, pvals):
            if sh >= 0:
                nxt[sh:] += p * cur[: W - sh]
                if sh:
                    leak += p * float(cur[W - sh :].sum())
            else:
                nxt[: W + sh] += p * cur[-sh:]
                leak += p * float(cur[:-sh].sum())
        if kill_idx.size:
            ledger[k, :] = nxt[kill_idx]
            nxt[kill_idx] = 0.0
        if rec_idx.size:
            rec[k, :] = nxt[rec_idx]
        if si < snap_steps.size and snap_steps[si] == k:
            snaps[si, :] = nxt
            si += 1
        cur, nxt = nxt, cur
    return cur, leak


def _march_fft(cur, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps):
    W = cur.size
    mind = int(shifts.min())
    maxd = int(shifts.max())
    K = maxd - mind + 1
    kern = np.zeros(K, dtype=np.float64)
    kern[shifts - mind] = pvals
    leak = 0.0
    si = 0
    lo_cut = -mind  # entries of the full convolution that fall left of the window
    for k in range(1, nsteps + 1):
        full = oaconvolve(cur, kern)
        nxt = full[lo_cut : lo_cut + W]
        leak += float(full[:lo_cut].sum()) + float(full[lo_cut + W :].sum())
        if kill_idx.size:
            ledger[k, :] = nxt[kill_idx]
            nxt[kill_idx] = 0.0
        if rec_idx.size:
            rec[k, :] = nxt[rec_idx]
        if si < snap_steps.size and snap_steps[si] == k:
            snaps[si, :] = nxt
            si += 1
        cur = np.ascontiguousarray(nxt)
    return cur, leak


def run_march(
    mass: np.ndarray,
    pvals: np.ndarray,
    shifts: np.ndarray,
    nsteps: int,
    kill_idx: np.ndarray,
    ledger: np.ndarray,
    rec_idx: np.ndarray,
    rec: np.ndarray,
    snap_steps: np.ndarray,
    snaps: np.ndarray,
    backend: str | None = None,
):
    """Run the windowed march; returns (final_mass, leak)."""
    which = resolve_backend(backend, n_atoms=pvals.size)
    if which == "numba":
        return _march_numba(
            mass, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps
        )
    if which == "fft":
        return _march_fft(
            mass, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps
        )
    return _march_numpy(
        mass, pvals, shifts, nsteps, kill_idx, ledger, rec_idx, rec, snap_steps, snaps
    )


# --------------------------------------------------------------------------
# splitmix64 stream + alias sampling
# --------------------------------------------------------------------------

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 1.0 / 9007199254740992.0  # 2**-53


def trial_seed_states(seed_root: int, t0: int, t1: int) -> np.ndarray:
    """Initial splitmix64 state for trials t0..t1-1 (derived, not sequential)."""
    t = np.arange(t0, t1, dtype=np.uint64)
    z = np.uint64(seed_root & 0xFFFFFFFFFFFFFFFF) + (t + np.uint64(1)) * _SM_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _sm_next(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


def build_alias(probs: np.ndarray):
    """Vose alias table; sampling consumes one uniform double per step."""
    K = probs.size
    accept = np.zeros(K, dtype=np.float64)
    alias = np.zeros(K, dtype=np.int64)
    scaled = probs * K
    small = [i for i in range(K) if scaled[i] < 1.0]
    large = [i for i in range(K) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large:
        accept[i] = 1.0
    for i in small:
        accept[i] = 1.0
    return accept, alias


# --------------------------------------------------------------------------
# Monte Carlo trial core
# --------------------------------------------------------------------------
#
# Per trial the core reports integer primitives from which every functional
# derives:
#   sigma      first entrance time into the killing set (n+1 if none)
#   hit_site   entrance site (INT_SENTINEL if none)
#   s_final    position at time min(sigma, n)
#   r_time     first time in [R, inf) strictly before absorption (n+1 if none)
#   r_site     the site then entered (INT_SENTINEL if none)
#   hl_site    site of first entrance into (-inf, hl_b] before absorption
#              (INT_SENTINEL if none); hl tracking is independent of killing.

INT_SENTINEL = np.int64(np.iinfo(np.int64).min)


@njit(cache=True, nogil=True)
def _mc_trials_numba(
    states,
    x0,
    nsteps,
    offsets,
    accept,
    alias,
    finite_sites,
    kill_halfline,
    kill_boundary,
    R,
    hl_b,
    sigma_out,
    hit_out,
    sfin_out,
    rtime_out,
    rsite_out,
    hlsite_out,
):
    K = offsets.size
    T = states.size
    for t in range(T):
        st = states[t]
        pos = x0
        sigma = nsteps + 1
        hit = INT_SENTINEL
        r_time = nsteps + 1
        r_site = INT_SENTINEL
        hl_site = INT_SENTINEL
        for k in range(1, nsteps + 1):
            st, z = _sm_next(st)
            u = (z >> np.uint64(11)) * _U53
            xj = u * K
            j = int(xj)
            if j >= K:
                j = K - 1
            if (xj - j) >= accept[j]:
                j = alias[j]
            pos = pos + offsets[j]
            if r_time > nsteps and pos >= R:
                r_time = k
                r_site = pos
            if hl_site == INT_SENTINEL and pos <= hl_b:
                hl_site = pos
            killed = False
            if kill_halfline:
                killed = pos <= kill_boundary
            else:
                for s in range(finite_sites.size):
                    if finite_sites[s] == pos:
                        killed = True
                        break
            if killed:
                sigma = k
                hit = pos
                break
        sigma_out[t] = sigma
        hit_out[t] = hit
        sfin_out[t] = pos
        rtime_out[t] = r_time if r_time <= sigma else nsteps + 1
        rsite_out[t] = r_site if r_time <= sigma else INT_SENTINEL
        hlsite_out[t] = hl_site


def _mc_trials_numpy(
    states,
    x0,
    nsteps,
    offsets,
    accept,
    alias,
    finite_sites,
    kill_halfline,
    kill_boundary,
    R,
    hl_b,
    sigma_out,
    hit_out,
    sfin_out,
    rtime_out,
    rsite_out,
    hlsite_out,
):
    K = offsets.size
    T = states.size
    st = states.copy()
    pos = np.full(T, x0, dtype=np.int64)
    alive = np.ones(T, dtype=bool)
    sigma_out[:] = nsteps + 1
    hit_out[:] = INT_SENTINEL
    rtime_out[:] = nsteps + 1
    rsite_out[:] = INT_SENTINEL
    hlsite_out[:] = INT_SENTINEL
    finite = np.asarray(finite_sites, dtype=np.int64)
    for k in range(1, nsteps + 1):
        st = st + _SM_GAMMA
        z = st
        z = (z ^ (z >> np.uint64(30))) * _SM_M1
        z = (z ^ (z >> np.uint64(27))) * _SM_M2
        z = z ^ (z >> np.uint64(31))
        u = (z >> np.uint64(11)) * _U53
        xj = u * K
        j = xj.astype(np.int64)
        np.minimum(j, K - 1, out=j)
        take_alias = (xj - j) >= accept[j]
        j[take_alias] = alias[j[take_alias]]
        pos[alive] += offsets[j[alive]]
        newly_r = alive & (rtime_out > nsteps) & (pos >= R)
        rtime_out[newly_r] = k
        rsite_out[newly_r] = pos[newly_r]
        newly_hl = alive & (hlsite_out == INT_SENTINEL) & (pos <= hl_b)
        hlsite_out[newly_hl] = pos[newly_hl]
        if kill_halfline:
            killed = alive & (pos <= kill_boundary)
        else:
            killed = alive & np.isin(pos, finite)
        sigma_out[killed] = k
        hit_out[killed] = pos[killed]
        alive &= ~killed
        if not alive.any():
            break
    sfin_out[:] = pos
    late = rtime_out > sigma_out
    rtime_out[late] = nsteps + 1
    rsite_out[late] = INT_SENTINEL


def run_mc_trials(
    seed_root: int,
    t0: int,
    t1: int,
    x0: int,
    nsteps: int,
    offsets: np.ndarray,
    accept: np.ndarray,
    alias: np.ndarray,
    finite_sites: np.ndarray,
    kill_halfline: bool,
    kill_boundary: int,
    R: int,
    hl_b: int,
    backend: str | None = None,
):
    """Simulate trials t0..t1-1; returns the six per-trial primitive arrays."""
    T = t1 - t0
    states = trial_seed_states(seed_root, t0, t1)
    outs = [np.zeros(T, dtype=np.int64) for _ in range(6)]
    which = resolve_backend(backend, n_atoms=1)
    fn = _mc_trials_numba if which == "numba" else _mc_trials_numpy
    fn(
        states,
        np.int64(x0),
        np.int64(nsteps),
        offsets.astype(np.int64),
        accept,
        alias,
        finite_sites.astype(np.int64),
        kill_halfline,
        np.int64(kill_boundary),
        np.int64(R),
        np.int64(hl_b),
        *outs,
    )
    return outs
