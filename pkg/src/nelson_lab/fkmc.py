"""Path-integral Monte Carlo for the coupled lattice model.

Two path processes share one estimator pipeline:

* ``process="walk"``: the uniformized continuous-time jump process generated
  by the lattice kinetic matrix, with killing at the Dirichlet deficit rate.
  Paths are piecewise constant, so every time integral the estimators need
  (drift vectors, the pair action, potential integrals) has a closed form per
  segment: the only statistical content is the path law itself, and the
  estimators are unbiased for the assembled operator.
* ``process="bm"``: Gaussian-increment Brownian paths on a fixed step grid
  (Euler-Maruyama), kept for the diagnostics stated for Brownian motion:
  variance laws, step-halving orders, and the Ito term of the dressed
  one-boson vector, which needs genuine Brownian increments.

Per-segment coherent flow (derived once, used everywhere): freezing the path
at site x, the Fock factor of the semigroup maps e^g eps(alpha) to itself with

    alpha' = -omega alpha - F_x,      g' = -<F_x, alpha> - V(x) - E_ren,

F_x = plane_shift(x) * f.  Running this along the reversed path from eps(0)
gives eps(-U_t^-) with U_t^- the forward-time drift integral

    U_t^- = int_0^t e^{-s omega} e^{-i k . B_s} f ds,

and the scalar accumulates the pair action.  Pairing two independent copies
in the coherent inner product turns ||(e^{-tH} g eps(0))(x)||^2 into an
expectation over path pairs with an explicit integrand; all inner products
are the mode-weighted ones, so the Monte Carlo side and the spectral side
refer to the same discrete model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import expm_multiply

from .matter import dirichlet_laplacian
from .modes import counterterm, ir_integral, kernel_beta, kernel_f

_OMEGA_FLOOR = 1e-12


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class PathConfig:
    """Ensemble parameters; horizon must sit on the step grid.

    ``x`` indexes the start site among the active matter sites; ``d`` is the
    matter dimension and is checked against the geometry when one is given.
    ``dirichlet=False`` folds the wall deficit of the walk into its
    self-loop (no killing): that is the free normalization used by the Z = 1
    calibration, not the assembled Dirichlet operator.  Seeds key
    counter-based Philox streams, one per path copy, so identical configs
    reproduce bit-identical ensembles regardless of batch layout.
    """

    dt: float
    horizon: float
    n_paths: int
    seed: int
    x: int = 0
    d: int = 1
    dirichlet: bool = True
    process: str = "walk"
    n_batches: int = 16

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 or self.horizon <= 0:
            raise ValueError("horizon must be a positive multiple of dt")
        if self.n_batches < 16:
            raise ValueError("batch means need at least 16 batches")
        if self.n_paths < self.n_batches:
            raise ValueError("need at least one path per batch")
        if self.process not in ("walk", "bm"):
            raise ValueError(f"unknown process {self.process!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    ess: float
    n_batches: int


def batch_stats(values: np.ndarray, n_batches: int = 16) -> MCEstimate:
    """Batch-mean estimate over equal consecutive chunks.

    Per-path values reduce batch-wise in a deterministic summation order;
    the effective sample size is the weight ratio (sum |v|)^2 / sum v^2.
    """
    v = np.asarray(values, dtype=float).ravel()
    if n_batches < 16:
        raise ValueError("batch means need at least 16 batches")
    per = len(v) // n_batches
    if per < 1:
        raise ValueError("not enough values for the batch count")
    used = v[: per * n_batches].reshape(n_batches, per)
    bm = used.mean(axis=1)
    mean = float(bm.mean())
    stderr = float(bm.std(ddof=1) / math.sqrt(n_batches))
    return MCEstimate(mean=mean, stderr=stderr, ess=_ess(v),
                      n_batches=n_batches)


def _ess(weights: np.ndarray) -> float:
    s1 = float(np.sum(np.abs(weights)))
    s2 = float(np.sum(weights * weights))
    return s1 * s1 / s2 if s2 > 0 else 0.0


def _sigma_distance(mean: float, ref: float, stderr: float) -> float:
    # zero spread happens legitimately when the integrand is constant
    # (z=0, e=0 calibrations); only a real discrepancy is infinite then
    diff = abs(mean - ref)
    if stderr > 0.0:
        return diff / stderr
    return 0.0 if diff <= 1e-12 * max(1.0, abs(ref)) else math.inf


# ------------------------------------------------------------- path states

@dataclass
class PathState:
    """One path pair (the plus and minus copies of the two-sided
    construction), with whatever accumulators the ops have filled in.

    Walk paths: ``times`` holds the K+2 segment breakpoints (0 and the
    horizon included), ``sites`` the K+1 per-segment site indices;
    ``death_time`` is infinite while the path survives.  Brownian paths:
    ``times`` is the shared step grid, ``pos`` the node positions,
    ``increments`` the raw Gaussian steps; ``exit_step`` is the first node
    off the active domain (n_steps + 1 if none).
    """

    kind: str
    horizon: float
    times: np.ndarray
    matter: object = None
    sites: np.ndarray | None = None
    death_time: float = math.inf
    pos: np.ndarray | None = None
    increments: np.ndarray | None = None
    exit_step: int | None = None
    times_minus: np.ndarray | None = None
    sites_minus: np.ndarray | None = None
    death_time_minus: float = math.inf
    pos_minus: np.ndarray | None = None
    increments_minus: np.ndarray | None = None
    exit_step_minus: int | None = None
    potential_integral: float | None = None
    uminus: np.ndarray | None = None
    uminus_minus: np.ndarray | None = None
    pair_u: float | None = None


class PathEnsemble:
    """Vectorized pair ensemble; indexing materializes a PathState."""

    def __init__(self, config: PathConfig, matter, plus: dict, minus: dict):
        self.config = config
        self.matter = matter
        self.plus = plus
        self.minus = minus

    def __len__(self) -> int:
        return self.config.n_paths

    def _copy_fields(self, data: dict, i: int, suffix: str) -> dict:
        if self.config.process == "walk":
            return {
                "times" + suffix: data["bps"][i],
                "sites" + suffix: data["sites"][i],
                "death_time" + suffix: float(data["death"][i]),
            }
        return {
            "times" + suffix: data["times"],
            "pos" + suffix: data["pos"][i],
            "increments" + suffix: data["inc"][i],
            "exit_step" + suffix: int(data["exit"][i]),
        }

    def __getitem__(self, i: int) -> PathState:
        if not 0 <= i < len(self):
            raise IndexError(i)
        fields = self._copy_fields(self.plus, i, "")
        fields.update(self._copy_fields(self.minus, i, "_minus"))
        tm = fields.pop("times_minus", None)
        st = PathState(kind=self.config.process, horizon=self.config.horizon,
                       matter=self.matter, **fields)
        if tm is not None:
            st.times_minus = tm
        if self.config.process == "bm":
            st.potential_integral = float(self.plus["vint"][i])
        return st


# ----------------------------------------------------------- walk sampling

def _walk_tables(matter, dirichlet: bool = True):
    """Jump table of the uniformized killed walk.

    Returns (rho, targets, cum): per-site rows of cumulative probabilities
    over the neighbor hops, then the kill slot; the remaining mass is the
    uniformization self-loop.  Without the Dirichlet flag the wall deficit
    joins the self-loop and nothing is ever killed.
    """
    T = dirichlet_laplacian(matter).tocsr()
    n = T.shape[0]
    diag = T.diagonal().copy()
    rho = float(diag.max())
    max_deg = max(int(np.diff(T.indptr).max()) - 1, 1)
    targets = np.zeros((n, max_deg), dtype=np.int64)
    rates = np.zeros((n, max_deg))
    for i in range(n):
        lo, hi = T.indptr[i], T.indptr[i + 1]
        cols, vals = T.indices[lo:hi], T.data[lo:hi]
        off = cols != i
        cols, vals = cols[off], -vals[off]
        targets[i, : len(cols)] = cols
        rates[i, : len(cols)] = vals
    kill = (diag - rates.sum(axis=1)) / rho
    if not dirichlet:
        kill = np.zeros(n)
    cum = np.cumsum(rates / rho, axis=1)
    cum = np.concatenate([cum, cum[:, -1:] + kill[:, None]], axis=1)
    return rho, targets, cum


def _walk_chunk(tables, sites0: np.ndarray, alive0: np.ndarray, t_len: float,
                rng) -> dict:
    """Advance every path by t_len with the exact uniformized jump chain.

    Breakpoints include 0 and t_len; padded event slots collapse to
    zero-length segments.  ``death`` is the in-chunk death time (inf where
    the path survives; 0 where it was already dead on entry).
    """
    rho, targets, cum = tables
    P = len(sites0)
    n_ev = rng.poisson(rho * t_len, size=P)
    emax = int(n_ev.max()) if P else 0
    tmat = rng.random((P, emax)) * t_len if emax else np.zeros((P, 0))
    if emax:
        tmat[np.arange(emax)[None, :] >= n_ev[:, None]] = t_len
        tmat.sort(axis=1)
    sites = np.empty((P, emax + 1), dtype=np.int64)
    sites[:, 0] = sites0
    death = np.where(alive0, np.inf, 0.0)
    cur = sites0.copy()
    alive = alive0.copy()
    for e in range(emax):
        act = alive & (e < n_ev)
        u = rng.random(P)
        slot = (u[:, None] > cum[cur]).sum(axis=1)
        hop = act & (slot < targets.shape[1])
        die = act & (slot == targets.shape[1])
        cur = np.where(hop,
                       targets[cur, np.minimum(slot, targets.shape[1] - 1)],
                       cur)
        death = np.where(die, tmat[:, e], death)
        alive = alive & ~die
        sites[:, e + 1] = cur
    bps = np.concatenate(
        [np.zeros((P, 1)), tmat, np.full((P, 1), t_len)], axis=1)
    return {"bps": bps, "sites": sites, "death": death, "end": cur,
            "alive": alive}


def _rng_for(config: PathConfig, tag: int):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence((config.seed, tag))))


# ------------------------------------------------------- Brownian sampling

def _nearest_site_ok(matter, pos: np.ndarray) -> np.ndarray:
    """True where the nearest lattice cell is an active site."""
    shape = np.asarray(matter.shape)
    idx = np.rint(pos / matter.h + (shape - 1) / 2.0).astype(int)
    ok = np.all((idx >= 0) & (idx < shape), axis=-1)
    flat = np.zeros(pos.shape[:-1], dtype=bool)
    if ok.any():
        box = matter.mask.reshape(matter.shape)
        flat[ok] = box[tuple(idx[ok].T)]
    return flat


def _bm_copy(config: PathConfig, rng, start: np.ndarray, matter=None,
             potential=None) -> dict:
    S, d, P = config.n_steps, config.d, config.n_paths
    inc = rng.normal(0.0, math.sqrt(config.dt), size=(P, S, d))
    pos = np.empty((P, S + 1, d))
    pos[:, 0] = start
    np.cumsum(inc, axis=1, out=pos[:, 1:])
    pos[:, 1:] += start
    times = np.arange(S + 1) * config.dt
    exit_step = np.full(P, S + 1, dtype=np.int64)
    if matter is not None and config.dirichlet:
        bad = ~_nearest_site_ok(matter, pos.reshape(-1, d)).reshape(P, S + 1)
        has = bad.any(axis=1)
        exit_step[has] = bad[has].argmax(axis=1)
    vint = np.zeros(P)
    if potential is not None:
        vals = np.asarray(potential(pos)).reshape(P, S + 1)
        live = np.arange(S + 1)[None, :] < exit_step[:, None]
        wts = np.full(S + 1, config.dt)
        wts[0] = wts[-1] = config.dt / 2.0
        vint = np.sum(np.where(live, vals, 0.0) * wts[None, :], axis=1)
    return {"times": times, "pos": pos, "inc": inc, "exit": exit_step,
            "vint": vint}


def sample_paths(config: PathConfig, potential=None, mask=None) -> PathEnsemble:
    """Draw the pair ensemble for the configured process.

    ``mask`` is the matter geometry: required for the walk; optional for
    Brownian paths, where it supplies the start coordinate and the
    Dirichlet first-exit flag.  ``potential`` is a callable on positions
    for Brownian paths (walk estimators read site potentials from the
    geometry instead).
    """
    matter = mask
    if config.process == "walk":
        if matter is None:
            raise ValueError("the walk process needs the matter geometry")
        if matter.dim != config.d:
            raise ValueError("config.d does not match the geometry")
        tables = _walk_tables(matter, config.dirichlet)
        start = np.full(config.n_paths, config.x, dtype=np.int64)
        alive = np.ones(config.n_paths, dtype=bool)
        plus = _walk_chunk(tables, start, alive, config.horizon,
                           _rng_for(config, 0))
        minus = _walk_chunk(tables, start, alive, config.horizon,
                            _rng_for(config, 1))
        return PathEnsemble(config, matter, plus, minus)
    if matter is not None:
        if matter.dim != config.d:
            raise ValueError("config.d does not match the geometry")
        start = matter.active_sites[config.x]
    else:
        start = np.zeros(config.d)
    plus = _bm_copy(config, _rng_for(config, 0), start, matter, potential)
    minus = _bm_copy(config, _rng_for(config, 1), start, matter, potential)
    return PathEnsemble(config, matter, plus, minus)


# ------------------------------------------------- per-segment closed forms

def _g1(om: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """(1 - e^{-dt om}) / om with the small-om limit."""
    z = dt[..., None] * om
    safe = np.where(om > _OMEGA_FLOOR, om, 1.0)
    return np.where(om > _OMEGA_FLOOR, -np.expm1(-z) / safe, dt[..., None])


class _SegmentAccumulator:
    """Exact per-segment integrals along piecewise-constant paths.

    Tracks, per path and mode,
      drift D = int_0^t e^{-s om - i k.B_s} ds          (absolute weight),
      pair  I = int_0^t int_0^s e^{-(s-r) om} e^{-i k.(B_s - B_r)} dr ds,
    plus the potential integral, through the closed forms on each segment
    and the running inner integral J(s) = int_0^s e^{-(s-r) om + i k.B_r} dr.
    """

    def __init__(self, omega: np.ndarray, phases: np.ndarray,
                 vsite: np.ndarray, n_paths: int):
        self.om = omega
        self.ph = phases  # (n_sites, m) values e^{-i k . x}
        self.vs = vsite
        m = omega.shape[0]
        self.D = np.zeros((n_paths, m), dtype=complex)
        self.I = np.zeros((n_paths, m), dtype=complex)
        self.J = np.zeros((n_paths, m), dtype=complex)
        self.V = np.zeros(n_paths)
        self.t0 = 0.0

    def extend(self, chunk: dict, dead_on_entry: np.ndarray):
        bps, sites = chunk["bps"], chunk["sites"]
        om = self.om
        safe = np.where(om > _OMEGA_FLOOR, om, 1.0)
        for e in range(sites.shape[1]):
            a = bps[:, e]
            # a killed path holds no further field content (its weight dies
            # with it anyway): clip each segment at the death time
            cut = np.where(dead_on_entry, 0.0,
                           np.minimum(bps[:, e + 1], chunk["death"]))
            dt = np.maximum(cut - a, 0.0)
            if not dt.any():
                continue
            p = self.ph[sites[:, e]]
            g1 = _g1(om, dt)
            self.D += p * np.exp(-(self.t0 + a)[:, None] * om) * g1
            tail = np.where(om > _OMEGA_FLOOR,
                            (dt[:, None] - g1) / safe,
                            0.5 * dt[:, None] ** 2)
            self.I += p * self.J * g1 + tail
            self.J = np.exp(-dt[:, None] * om) * self.J + np.conj(p) * g1
            self.V += self.vs[sites[:, e]] * dt
        self.t0 += float(bps[0, -1])


def _phase_table(matter, grid) -> np.ndarray:
    return np.exp(-1j * (matter.active_sites @ grid.k[:, : matter.dim].T))


# ------------------------------------------------------------- per-path ops

def _which_walk(path: PathState, which: str):
    if which == "plus":
        return path.times, path.sites, path.death_time
    t = path.times_minus if path.times_minus is not None else path.times
    return t, path.sites_minus, path.death_time_minus


def _walk_drift(path: PathState, grid, which: str, t: float) -> np.ndarray:
    bps, sites, death = _which_walk(path, which)
    if death <= t:
        raise ValueError("path was killed inside the horizon")
    ph = _phase_table(path.matter, grid)
    om = grid.omega
    D = np.zeros(grid.m, dtype=complex)
    for i in range(len(sites)):
        a, b = min(bps[i], t), min(bps[i + 1], t)
        if b <= a:
            continue
        D += ph[sites[i]] * np.exp(-a * om) * _g1(om, np.array([b - a]))[0]
    return D


def u_minus(path: PathState, grid, e: float, L: float, Lambda: float,
            copy: str = "plus") -> np.ndarray:
    """Dressed one-boson vector U_t^- of one path copy.

    The window form trades the drift of the modes above L for a boundary
    term and an Ito integral against the window kernel beta_{L,Lambda}
    (an exact identity in law, by Ito's formula on e^{-s om - i k.B_s}):

      U_t^- = int e^{-s om - i k.B} f_L ds
              + (1 - e^{-t om - i k.B_t}) beta
              - i int e^{-s om - i k.B} beta (k . dB_s).

    Walk paths evaluate drift terms exactly per segment but carry no
    Brownian increments, so they accept the window form only when it is
    empty (beta == 0 on the grid, i.e. L == Lambda).  Brownian paths use
    the trapezoid rule for the drift and the left-point Euler-Maruyama sum
    for the Ito term.
    """
    if L < 0 or L > Lambda:
        raise ValueError("need 0 <= L <= Lambda")
    f_L = kernel_f(grid, e, L)
    beta = kernel_beta(grid, e, L, Lambda)
    om = grid.omega
    t = path.horizon
    if path.kind == "walk":
        if np.any(beta != 0.0):
            raise ValueError(
                "walk paths carry the L == Lambda form only; the window "
                "kernel's Ito term needs Brownian increments")
        bps, sites, death = _which_walk(path, copy)
        if death <= t:
            raise ValueError("path was killed inside the horizon")
        ph = _phase_table(path.matter, grid)
        D = np.zeros(grid.m, dtype=complex)
        for i in range(len(sites)):
            dt = bps[i + 1] - bps[i]
            if dt <= 0:
                continue
            D += (ph[sites[i]] * np.exp(-bps[i] * om)
                  * _g1(om, np.array([dt]))[0])
        end_phase = ph[sites[-1]]
        out = f_L * D + (1.0 - np.exp(-t * om) * end_phase) * beta
        return _store_u(path, copy, out)
    pos = path.pos if copy == "plus" else path.pos_minus
    inc = path.increments if copy == "plus" else path.increments_minus
    times = path.times
    kd = grid.k[:, : pos.shape[1]]
    phases = np.exp(-1j * (pos @ kd.T))  # (S+1, m)
    vals = np.exp(-times[:, None] * om) * phases
    wts = np.full(len(times), times[1] - times[0])
    wts[0] = wts[-1] = wts[0] / 2.0
    drift = f_L * np.sum(vals * wts[:, None], axis=0)
    ito = beta * np.sum(vals[:-1] * (1j * (inc @ kd.T)), axis=0)
    out = drift + (1.0 - np.exp(-t * om) * phases[-1]) * beta - ito
    return _store_u(path, copy, out)


def _store_u(path: PathState, copy: str, out: np.ndarray) -> np.ndarray:
    if copy == "plus":
        path.uminus = out
    else:
        path.uminus_minus = out
    return out


def pair_action(path: PathState, grid, e: float, Lambda: float,
                copy: str = "plus") -> float:
    """Renormalized pair action of one path copy,

      u_t = sum_j w_j |f_j|^2 Re I_j - t E_ren,
      I_j = int_0^t int_0^s e^{-(s-r) om_j} e^{-i k_j.(B_s - B_r)} dr ds.

    Walk segments are exact; Brownian paths are read at their left points
    (the O(dt) convention the step-halving diagnostics measure).
    """
    if not np.isfinite(Lambda):
        raise ValueError("pair action needs a finite cutoff")
    f = kernel_f(grid, e, Lambda)
    om = grid.omega
    if path.kind == "walk":
        bps, sites, death = _which_walk(path, copy)
        if death <= path.horizon:
            raise ValueError("path was killed inside the horizon")
        ph = _phase_table(path.matter, grid)
        seg_phase = ph[sites]
    else:
        pos = path.pos if copy == "plus" else path.pos_minus
        exit_step = path.exit_step if copy == "plus" else path.exit_step_minus
        bps = path.times
        if exit_step is not None and exit_step <= len(bps) - 1:
            raise ValueError("path was killed inside the horizon")
        seg_phase = np.exp(-1j * (pos[:-1] @ grid.k[:, : pos.shape[1]].T))
    J = np.zeros(grid.m, dtype=complex)
    I = np.zeros(grid.m, dtype=complex)
    safe = np.where(om > _OMEGA_FLOOR, om, 1.0)
    for i in range(seg_phase.shape[0]):
        dt = bps[i + 1] - bps[i]
        if dt <= 0:
            continue
        p = seg_phase[i]
        g1 = _g1(om, np.array([dt]))[0]
        tail = np.where(om > _OMEGA_FLOOR, (dt - g1) / safe, 0.5 * dt * dt)
        I += p * J * g1 + tail
        J = np.exp(-dt * om) * J + np.conj(p) * g1
    raw = float(np.sum(grid.w * np.abs(f) ** 2 * I).real)
    path.pair_u = raw - path.horizon * counterterm(grid, e, Lambda)
    return path.pair_u


def w_integral(path: PathState, grid, e: float, L: float,
               t: float | None = None) -> dict:
    """Infrared pairing w_{L,t} of the two path copies.

    Separable per mode below the scale L:
      w = sum_{|k_j| <= L} w_j |f_j|^2 A_j conj(A'_j),
    with A the forward drift integral of each copy.  The real part is the
    value; the imaginary part cancels in expectation by antipodal closure
    and is reported as a symmetry diagnostic.
    """
    t = path.horizon if t is None else float(t)
    if t > path.horizon + 1e-12:
        raise ValueError("t beyond the sampled horizon")
    f_L = kernel_f(grid, e, L)
    om = grid.omega

    def drift(which: str) -> np.ndarray:
        if path.kind == "walk":
            return _walk_drift(path, grid, which, t)
        pos = path.pos if which == "plus" else path.pos_minus
        keep = path.times <= t + 1e-12
        times = path.times[keep]
        if len(times) < 2:
            return np.zeros(grid.m, dtype=complex)
        ph = np.exp(-1j * (pos[keep] @ grid.k[:, : pos.shape[1]].T))
        vals = np.exp(-times[:, None] * om) * ph
        wts = np.full(len(times), times[1] - times[0])
        wts[0] = wts[-1] = wts[0] / 2.0
        return np.sum(vals * wts[:, None], axis=0)

    A, Ap = drift("plus"), drift("minus")
    val = np.sum(grid.w * np.abs(f_L) ** 2 * A * np.conj(Ap))
    return {"value": float(val.real), "imag": float(val.imag), "t": t,
            "L": float(L)}


# ------------------------------------------------------- ensemble pipeline

def _pair_data(H, config: PathConfig, t_marks) -> dict:
    """Walk both copies to the largest mark, snapshotting per-path weights.

    Each snapshot holds the log-weight (raw pair action minus potential
    integral minus t E_ren), the dressed vector U = f * D, the endpoint
    sites and the survival mask.
    """
    if config.process != "walk":
        raise ValueError("the ensemble estimators run on the walk process")
    matter, grid = H.matter, H.grid
    if matter.dim != config.d:
        raise ValueError("config.d does not match the geometry")
    if not 0 <= config.x < matter.n_active:
        raise ValueError("start site out of range")
    lam = H.meta["Lambda"]
    if lam is None or not np.isfinite(lam):
        raise ValueError("ensemble estimators need the finite-cutoff model")
    e = H.meta["e"]
    marks = sorted(float(t) for t in t_marks)
    if marks[-1] > config.horizon + 1e-12:
        raise ValueError("mark beyond the configured horizon")
    tables = _walk_tables(matter, config.dirichlet)
    ph = _phase_table(matter, grid)
    f = kernel_f(grid, e, lam)
    w_absf2 = grid.w * np.abs(f) ** 2
    ct = H.meta["counterterm"]
    copies = []
    for tag in (0, 1):
        rng = _rng_for(config, tag)
        sites = np.full(config.n_paths, config.x, dtype=np.int64)
        alive = np.ones(config.n_paths, dtype=bool)
        acc = _SegmentAccumulator(grid.omega, ph, matter.active_V,
                                  config.n_paths)
        snaps = []
        t_prev = 0.0
        for tm in marks:
            if tm > t_prev + 1e-15:
                ch = _walk_chunk(tables, sites, alive, tm - t_prev, rng)
                acc.extend(ch, ~alive)
                sites, alive = ch["end"], alive & ch["alive"]
                t_prev = tm
            snaps.append({
                "t": tm,
                "logw": (acc.I @ w_absf2).real - acc.V - tm * ct,
                "U": f[None, :] * acc.D,
                "site": sites.copy(),
                "alive": alive.copy(),
            })
        copies.append(snaps)
    return {"marks": marks, "copies": copies}


def _pair_integrand(grid, a: dict, b: dict, g: np.ndarray) -> np.ndarray:
    """Per-pair integrand g g' e^{u + u' - int V - int V'} e^{<U, U'>}."""
    cross = ((np.conj(a["U"]) * b["U"]) @ grid.w).real
    ga = np.where(a["alive"], g[a["site"]], 0.0)
    gb = np.where(b["alive"], g[b["site"]], 0.0)
    return ga * gb * np.exp(a["logw"] + b["logw"] + cross)


def _as_site_weights(H, g) -> np.ndarray:
    if g is None:
        return np.ones(H.matter.n_active)
    g = np.asarray(g, dtype=float)
    if g.shape != (H.matter.n_active,):
        raise ValueError("site weights must match the active sites")
    return g


def vacuum_amplitude(H, config: PathConfig, g=None,
                     t: float | None = None) -> MCEstimate:
    """Monte Carlo estimate of Z_{x,t} = ||(e^{-tH} g eps(0))(x)||^2.

    Two independent copies started from the same site; the coherent pairing
    of their dressed vectors is taken in closed form.  The estimate is
    positive in law for nonnegative g; killed copies contribute zero.
    """
    t = config.horizon if t is None else float(t)
    g = _as_site_weights(H, g)
    data = _pair_data(H, config, (t,))
    a, b = data["copies"][0][0], data["copies"][1][0]
    return batch_stats(_pair_integrand(H.grid, a, b, g), config.n_batches)


def _spectral_amplitude(H, g: np.ndarray, t: float, x: int) -> float:
    """Krylov reference ||(e^{-tH} g eps(0))(x)||^2."""
    F = H.fock.dim
    vac = int(np.flatnonzero(H.fock.total == 0)[0])
    v = np.zeros(H.dim)
    v[np.arange(H.matter.n_active) * F + vac] = g
    w = expm_multiply(-t * H.matrix.tocsc(), v)
    row = w.reshape(H.matter.n_active, F)[x]
    return float(np.linalg.norm(row) ** 2)


def oracle_gate(H, config: PathConfig, g=None, x: int | None = None) -> dict:
    """The gate every reported path estimate hangs on: the sampled vacuum
    amplitude against the matrix exponential on the same model.

    Returns the estimate, the reference value, their distance in standard
    errors, and the verdict; reporting callers refuse to proceed when it
    fails.
    """
    g = _as_site_weights(H, g)
    x = config.x if x is None else int(x)
    cfg = replace(config, x=x)
    est = vacuum_amplitude(H, cfg, g)
    exact = _spectral_amplitude(H, g, cfg.horizon, x)
    dist = _sigma_distance(est.mean, exact, est.stderr)
    return {"estimate": est, "exact": exact, "sigma_distance": float(dist),
            "passed": bool(dist <= 3.0), "t": cfg.horizon, "x": x}


def fk_energy(H, config: PathConfig, g=None, t0: float = None,
              t1: float = None) -> MCEstimate:
    """Ground-energy estimator -log(Z_{t1} / Z_{t0}) / (2 (t1 - t0)).

    Both horizons are read off the same paths (the [0, t0] sub-path is a
    valid sample), so the amplitudes are strongly correlated; batch means
    are taken on the per-batch energies.
    """
    if t0 is None or t1 is None:
        raise ValueError("pass both horizons t0 < t1")
    if not 0.0 < t0 < t1 <= config.horizon + 1e-12:
        raise ValueError("need 0 < t0 < t1 <= horizon")
    g = _as_site_weights(H, g)
    data = _pair_data(H, config, (t0, t1))
    v0 = _pair_integrand(H.grid, data["copies"][0][0],
                         data["copies"][1][0], g)
    v1 = _pair_integrand(H.grid, data["copies"][0][1],
                         data["copies"][1][1], g)
    nb = config.n_batches
    per = len(v0) // nb
    z0 = v0[: per * nb].reshape(nb, per).mean(axis=1)
    z1 = v1[: per * nb].reshape(nb, per).mean(axis=1)
    if np.any(z0 <= 0.0) or np.any(z1 <= 0.0):
        raise ValueError("nonpositive batch amplitude; need more paths")
    ev = -np.log(z1 / z0) / (2.0 * (t1 - t0))
    return MCEstimate(mean=float(ev.mean()),
                      stderr=float(ev.std(ddof=1) / math.sqrt(nb)),
                      ess=_ess(v1), n_batches=nb)


def martingale_check(H, config: PathConfig, times, g=None, Phi=None,
                     vacuum_reduction: bool = False,
                     energy: float | None = None,
                     tol_sigma: float = 3.0) -> dict:
    """Constancy of E[m_t(x)] = e^{2 t E} ||(e^{-tH} g eps(0))(x)||^2 in t.

    The closed-form pairing covers vacuum-ray states g eps(0); a general
    Fock vector is accepted only through its vacuum-sector reduction
    (``vacuum_reduction=True``), since the dressed pairing of excited
    sectors is not available here.  ``energy`` is the reference E and must
    be supplied by the caller; the estimator does not silently pick its
    own.
    """
    if energy is None:
        raise ValueError("pass the reference energy explicitly")
    if Phi is not None:
        vec = Phi.vector if hasattr(Phi, "vector") else np.asarray(Phi)
        rows = vec.reshape(H.matter.n_active, H.fock.dim)
        vac = int(np.flatnonzero(H.fock.total == 0)[0])
        if not vacuum_reduction:
            off = rows[:, np.arange(H.fock.dim) != vac]
            if np.linalg.norm(off) > 1e-12 * max(np.linalg.norm(vec), 1.0):
                raise ValueError(
                    "general vectors need vacuum_reduction=True; only the "
                    "vacuum-ray pairing has a closed form")
        g = rows[:, vac].real
    g = _as_site_weights(H, g)
    marks = sorted(float(t) for t in times)
    if marks[0] < 0:
        raise ValueError("negative times")
    data = _pair_data(H, config, marks)
    rows_out = []
    for i, t in enumerate(marks):
        vals = _pair_integrand(H.grid, data["copies"][0][i],
                               data["copies"][1][i], g)
        est = batch_stats(vals * math.exp(2.0 * t * energy),
                          config.n_batches)
        rows_out.append({"t": t, "mean": est.mean, "stderr": est.stderr,
                         "ess": est.ess})
    worst = 0.0
    for i in range(len(rows_out)):
        for j in range(i + 1, len(rows_out)):
            num = abs(rows_out[i]["mean"] - rows_out[j]["mean"])
            den = math.hypot(rows_out[i]["stderr"], rows_out[j]["stderr"])
            worst = max(worst, num / den if den > 0 else math.inf)
    return {"rows": rows_out, "max_sigma_distance": worst,
            "passed": bool(worst <= tol_sigma), "energy": float(energy)}


# ------------------------------------------------- generating functionals

def _phi_rows(H, Phi) -> np.ndarray:
    vec = Phi.vector if hasattr(Phi, "vector") else np.asarray(Phi)
    return vec.reshape(H.matter.n_active, H.fock.dim)


def _vacuum_reduction(H, rows: np.ndarray) -> np.ndarray:
    vac = int(np.flatnonzero(H.fock.total == 0)[0])
    return rows[:, vac].real


def _mc_ratio(num: np.ndarray, den: np.ndarray, n_batches: int) -> MCEstimate:
    per = len(den) // n_batches
    nb_num = num[: per * n_batches].reshape(n_batches, per).mean(axis=1)
    nb_den = den[: per * n_batches].reshape(n_batches, per).mean(axis=1)
    if np.any(nb_den == 0.0):
        raise ValueError("empty batch; need more paths")
    r = nb_num / nb_den
    return MCEstimate(mean=float(r.mean()),
                      stderr=float(r.std(ddof=1) / math.sqrt(n_batches)),
                      ess=_ess(den), n_batches=n_batches)


def number_generating(z: float, L: float, H, config: PathConfig,
                      Phi, g=None) -> dict:
    """Boson-number generating function below the scale L, both routes.

    Path route: average of exp((e^{-z} - 1) w_{L,t}) under the normalized
    pair measure at the start site.  Spectral route:
    <Phi(x), e^{-z dGamma(chi_L)} Phi(x)> / ||Phi(x)||^2.
    """
    z = float(z)
    if z < 0:
        raise ValueError("z >= 0 only; continuation is out of scope")
    d_ir, divergent = ir_integral(H.grid.mu, H.grid.eta_spec)
    if divergent:
        raise ValueError("infrared-divergent configuration")
    grid = H.grid
    rows = _phi_rows(H, Phi)
    if g is None:
        g = _vacuum_reduction(H, rows)
    g = _as_site_weights(H, g)
    data = _pair_data(H, config, (config.horizon,))
    a, b = data["copies"][0][0], data["copies"][1][0]
    base = _pair_integrand(grid, a, b, g)
    # w restricted below L: U already carries f_Lambda, and f_L differs
    # from it only by the |k| <= L indicator
    sel = grid.w * (grid.kabs <= L + 1e-12)
    wpair = ((np.conj(a["U"]) * b["U"]) @ sel).real
    factor = np.exp((math.exp(-z) - 1.0) * wpair)
    mc = _mc_ratio(base * factor, base, config.n_batches)
    chi = (grid.kabs <= L + 1e-12).astype(float)
    diag = np.exp(-z * (H.fock.occ @ chi))
    row = rows[config.x]
    den = float(np.linalg.norm(row) ** 2)
    spectral = float((np.abs(row) ** 2 @ diag) / den)
    dist = _sigma_distance(mc.mean, spectral, mc.stderr)
    return {"mc": mc, "spectral": spectral, "sigma_distance": float(dist),
            "passed": bool(dist <= 3.0), "z": z, "L": float(L),
            "t": config.horizon, "d_ir": d_ir}


def field_generating(h: np.ndarray, z: float, H, config: PathConfig,
                     Phi, g=None) -> dict:
    """Quadratic-field generating function e^{-z phi(h)^2 / 2}, both routes.

    Per pair the field value is Gaussian with mean
    alpha = -(<U, h> + <h, U'>) and vacuum variance ||h||^2, so the
    conditional expectation has the closed form
    (1 + z ||h||^2)^{-1/2} exp(-z alpha^2 / (2 (1 + z ||h||^2))); the path
    route averages it under the pair measure.  The spectral route
    diagonalizes phi(h) on the Fock factor.  alpha is real for
    conjugate-even h; its residual imaginary part is reported.
    """
    z = float(z)
    if z < 0:
        raise ValueError("z >= 0 only; continuation is out of scope")
    grid = H.grid
    h = np.asarray(h, dtype=complex)
    if h.shape != (grid.m,):
        raise ValueError("h must live on the mode grid")
    if not grid.is_conjugate_even(h):
        raise ValueError("field generating functions need conjugate-even h")
    rows = _phi_rows(H, Phi)
    if g is None:
        g = _vacuum_reduction(H, rows)
    g = _as_site_weights(H, g)
    data = _pair_data(H, config, (config.horizon,))
    a, b = data["copies"][0][0], data["copies"][1][0]
    base = _pair_integrand(grid, a, b, g)
    alpha_c = -((np.conj(a["U"]) * h[None, :]) @ grid.w
                + (np.conj(h)[None, :] * b["U"]) @ grid.w)
    alpha = alpha_c.real
    imag_max = float(np.max(np.abs(alpha_c.imag), initial=0.0))
    hn2 = grid.norm(h) ** 2
    pref = (1.0 + z * hn2) ** -0.5
    factor = pref * np.exp(-z * alpha ** 2 / (2.0 * (1.0 + z * hn2)))
    mc = _mc_ratio(base * factor, base, config.n_batches)
    from .fock import field_op

    phi = field_op(h, H.fock, grid).toarray()
    vals, vecs = np.linalg.eigh(phi)
    row = rows[config.x]
    y = vecs.conj().T @ row
    den = float(np.linalg.norm(row) ** 2)
    spectral = float((np.abs(y) ** 2 @ np.exp(-z * vals ** 2 / 2.0)) / den)
    dist = _sigma_distance(mc.mean, spectral, mc.stderr)
    return {"mc": mc, "spectral": spectral, "sigma_distance": float(dist),
            "passed": bool(dist <= 3.0), "z": z, "h_norm_sq": hn2,
            "alpha_imag_max": imag_max, "t": config.horizon}


__all__ = [
    "MCEstimate",
    "PathConfig",
    "PathEnsemble",
    "PathState",
    "batch_stats",
    "fk_energy",
    "field_generating",
    "martingale_check",
    "number_generating",
    "oracle_gate",
    "pair_action",
    "sample_paths",
    "u_minus",
    "vacuum_amplitude",
    "w_integral",
]
