"""Momentum-mode grids, coupling kernels, and renormalization integrals.

The field lives on a finite set of momentum modes k_j with positive quadrature
weights w_j, chosen so that sums Sum_j w_j g(k_j) approximate integrals
int g(k) d^3k for radial-times-smooth integrands.  All discrete inner products
are weighted:  <f, g> = Sum_j w_j conj(f_j) g_j.

Every grid is antipodally closed: for each mode j there is a partner j* with
k_{j*} = -k_j and w_{j*} = w_j.  This houses the conjugate-even subspace
{f : f(-k) = conj(f(k))}, on which all field operators built downstream are
simultaneously representable as real multiplication operators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

__all__ = [
    "ModeGrid",
    "build_mode_grid",
    "eta_profile",
    "kernel_f",
    "kernel_beta",
    "counterterm",
    "b_norm",
    "ir_integral",
    "ir_sum",
]


def eta_profile(eta_spec) -> Callable[[np.ndarray], np.ndarray]:
    """Resolve an eta specification into a radial profile |k| -> eta(|k|).

    Accepted forms:
      "one"                constant 1
      ("ir_sharp", sigma)  indicator of |k| > sigma (sharp infrared cutoff)
      ("ramp", sigma)      min(1, |k|/sigma) (continuous infrared taper)
      callable             used as-is on arrays of radii
    """
    if callable(eta_spec):
        return eta_spec
    if eta_spec == "one":
        return lambda r: np.ones_like(np.asarray(r, dtype=float))
    if isinstance(eta_spec, (tuple, list)) and len(eta_spec) == 2:
        kind, sigma = eta_spec
        sigma = float(sigma)
        if kind == "ir_sharp":
            return lambda r: (np.asarray(r, dtype=float) > sigma).astype(float)
        if kind == "ramp":
            return lambda r: np.minimum(1.0, np.asarray(r, dtype=float) / sigma)
    raise ValueError(f"unrecognized eta profile: {eta_spec!r}")


@dataclass(frozen=True)
class ModeGrid:
    """Finite momentum grid with weights, dispersion, and antipodal pairing.

    k:     (M, 3) mode positions
    w:     (M,) strictly positive quadrature weights (include the 4*pi*k^2
           radial measure and the angular normalization)
    mu:    boson mass >= 0; omega = sqrt(|k|^2 + mu^2)
    eta:   (M,) smearing profile values eta(|k_j|)
    pair:  (M,) index of the antipodal partner, k[pair[j]] == -k[j]
    """

    k: np.ndarray
    w: np.ndarray
    mu: float
    eta: np.ndarray
    pair: np.ndarray
    radial_nodes: int
    angular_scheme: str
    eta_spec: object = field(repr=False, default="one")

    @property
    def m(self) -> int:
        return self.k.shape[0]

    @property
    def kabs(self) -> np.ndarray:
        return np.linalg.norm(self.k, axis=1)

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.kabs**2 + self.mu**2)

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """Weighted inner product <f, g> = Sum_j w_j conj(f_j) g_j."""
        return complex(np.sum(self.w * np.conj(f) * g))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.w * np.abs(f) ** 2).real))

    def is_conjugate_even(self, f: np.ndarray, tol: float = 1e-12) -> bool:
        f = np.asarray(f)
        return bool(np.max(np.abs(np.conj(f) - f[self.pair])) <= tol * max(1.0, np.max(np.abs(f))))

    def plane_shift(self, x: np.ndarray) -> np.ndarray:
        """Values of e_x(k_j) = exp(-i k_j . x); x may have dim d <= 3.

        For matter dimension d < 3 only the first d components of k enter the
        phase; the weights keep the full 3-d measure.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = x.shape[-1]
        return np.exp(-1j * (self.k[:, :d] @ x))


_ANGULAR_SETS = {
    # direction sets closed under v -> -v; weights sum to 1 per shell.
    # The minimal set points along the first axis so it still couples to
    # low-dimensional matter (plane phases use the leading components).
    "single-ray": np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
    "antipodal-pairs": np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    ),
}


def _product_directions(n_theta: int = 4, n_phi: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre x uniform-azimuth sphere rule, antipodally closed.

    Antipode (theta, phi) -> (pi - theta, phi + pi): cos(theta) nodes are
    symmetric about 0 and n_phi is forced even, so the direction set maps to
    itself under v -> -v.
    """
    if n_phi % 2:
        n_phi += 1
    ct, wt = leggauss(n_theta)
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    dirs, wts = [], []
    for c, wc in zip(ct, wt):
        s = np.sqrt(1.0 - c * c)
        for p in phis:
            dirs.append([s * np.cos(p), s * np.sin(p), c])
            wts.append(wc / (2.0 * n_phi))  # leggauss weights sum to 2
    return np.array(dirs), np.array(wts)


def _pairing(dirs: np.ndarray) -> np.ndarray:
    pair = np.full(len(dirs), -1, dtype=int)
    for i, v in enumerate(dirs):
        d2 = np.sum((dirs + v) ** 2, axis=1)
        j = int(np.argmin(d2))
        if d2[j] > 1e-20:
            raise ValueError("angular scheme is not antipodally closed")
        pair[i] = j
    return pair


def build_mode_grid(
    radial_nodes: int,
    radial_range: tuple[float, float],
    angular_scheme: str = "antipodal-pairs",
    mu: float = 1.0,
    eta_spec="one",
    avoid_radii: Sequence[float] = (),
) -> ModeGrid:
    """Build an antipodally paired momentum grid.

    Radial nodes are Gauss-Legendre on (k_min, k_max) carrying the 4*pi*k^2
    measure; each shell's weight is split over an antipodally closed direction
    set selected by angular_scheme in {"single-ray", "antipodal-pairs",
    "product-grid"}.

    Constraints enforced here rather than downstream:
      * k_min >= 0, k_max > k_min, radial_nodes >= 1;
      * no node at |k| = 0 (mu = 0 keeps omega > 0 off the origin; Gauss
        nodes are interior so k_min = 0 is allowed);
      * no node within 1e-8*(1+c) of any radius c in avoid_radii — sharp
        cutoff indicators must never be evaluated exactly on a node.  The
        range is nudged inward by half a node gap until clear.
    """
    kmin, kmax = map(float, radial_range)
    if not (0.0 <= kmin < kmax):
        raise ValueError(f"bad radial range {radial_range}")
    if radial_nodes < 1:
        raise ValueError("radial_nodes must be >= 1")
    if mu < 0:
        raise ValueError("mu must be >= 0")

    x, wx = leggauss(radial_nodes)

    def radial(kmin_, kmax_):
        r = 0.5 * (kmax_ - kmin_) * x + 0.5 * (kmax_ + kmin_)
        wr = 0.5 * (kmax_ - kmin_) * wx
        return r, wr

    r, wr = radial(kmin, kmax)
    gap = np.min(np.diff(np.sort(r))) if radial_nodes > 1 else 0.5 * (kmax - kmin)
    for _ in range(64):
        bad = any(np.min(np.abs(r - c)) < 1e-8 * (1.0 + c) for c in avoid_radii)
        if not bad:
            break
        kmin += 0.5 * gap * 1e-3
        kmax -= 0.5 * gap * 1e-3
        r, wr = radial(kmin, kmax)
    else:
        raise ValueError("could not place nodes clear of avoid_radii")

    if angular_scheme in _ANGULAR_SETS:
        dirs = _ANGULAR_SETS[angular_scheme]
        wdir = np.full(len(dirs), 1.0 / len(dirs))
    elif angular_scheme == "product-grid":
        dirs, wdir = _product_directions()
    else:
        raise ValueError(f"unknown angular_scheme {angular_scheme!r}")
    dir_pair = _pairing(dirs)

    n_dir = len(dirs)
    # canonicalize: each direction equals exactly minus its partner, so all
    # even-symmetry cancellations downstream are machine-exact
    for i in range(n_dir):
        j = dir_pair[i]
        if i < j:
            dirs[j] = -dirs[i]
            wdir[j] = wdir[i]
    k = np.repeat(r, n_dir)[:, None] * np.tile(dirs, (radial_nodes, 1))
    w = np.repeat(wr * 4.0 * np.pi * r**2, n_dir) * np.tile(wdir, radial_nodes)
    pair = (np.repeat(np.arange(radial_nodes), n_dir) * n_dir + np.tile(dir_pair, radial_nodes))

    eta = eta_profile(eta_spec)(np.linalg.norm(k, axis=1))
    grid = ModeGrid(
        k=k,
        w=w,
        mu=float(mu),
        eta=np.asarray(eta, dtype=float),
        pair=pair.astype(int),
        radial_nodes=radial_nodes,
        angular_scheme=angular_scheme,
        eta_spec=eta_spec,
    )
    if np.any(grid.kabs == 0.0):
        raise ValueError("grid placed a mode at k = 0")
    if np.any(w <= 0.0):
        raise ValueError("nonpositive quadrature weight")
    # pairing must be an involution matching -k exactly
    assert np.max(np.abs(grid.k[grid.pair] + grid.k)) < 1e-12
    return grid


def kernel_f(grid: ModeGrid, e: float, lam: float) -> np.ndarray:
    """Coupling kernel f_Lambda(k) = e * omega(k)^(-1/2) * eta(k) * [|k| <= Lambda].

    lam = inf is allowed (no ultraviolet cutoff).  Real and even on an
    antipodal grid, hence conjugate-even.
    """
    vals = e * grid.eta / np.sqrt(grid.omega)
    if np.isfinite(lam):
        vals = np.where(grid.kabs <= lam, vals, 0.0)
    return vals


def kernel_beta(grid: ModeGrid, e: float, K: float, lam: float) -> np.ndarray:
    """Dressing kernel beta_{K,Lambda}(k) = f_Lambda(k) 1_{|k|>K} / (omega(k) + |k|^2/2)."""
    if not (0.0 <= K):
        raise ValueError("K must be >= 0")
    if np.isfinite(lam) and K > lam:
        raise ValueError("K must be <= Lambda")
    f = kernel_f(grid, e, lam)
    return np.where(grid.kabs > K, f, 0.0) / (grid.omega + 0.5 * grid.kabs**2)


def counterterm(grid: ModeGrid, e: float, lam: float) -> float:
    """Renormalization energy E_Lambda^ren = <f_Lambda, beta_{0,Lambda}> on the grid.

    Diverges logarithmically as lam grows; only finite lam is meaningful here,
    so lam = inf raises.
    """
    if not np.isfinite(lam):
        raise ValueError("counterterm requires a finite ultraviolet cutoff")
    f = kernel_f(grid, e, lam)
    beta = kernel_beta(grid, e, 0.0, lam)
    return float(np.sum(grid.w * f * beta))


def b_norm(K: float, lam: float, scheme: str = "radial") -> float:
    """Tail norm b_{K,Lambda} = (int_{K<|k|<=Lambda} max(1, |k|^(1/2)) / (|k| + |k|^2/2)^2 d^3k)^(1/2).

    Continuum quantity controlling cutoff-difference bounds; lam = inf allowed.
    Two independent quadrature schemes are provided ("radial" integrates in k
    with a split at the max() kink; "inverse" substitutes u = 1/k on the tail)
    so one can cross-check the other.
    """
    if K < 0 or (np.isfinite(lam) and lam <= K):
        raise ValueError("need 0 <= K < Lambda")

    def integrand(k):
        return 4.0 * np.pi * k**2 * max(1.0, np.sqrt(k)) / (k + 0.5 * k**2) ** 2

    if scheme == "radial":
        pieces = []
        lo = K
        if K < 1.0:
            hi = min(1.0, lam)
            pieces.append(quad(integrand, lo, hi, limit=200)[0])
            lo = hi
        if lam > lo:
            if np.isfinite(lam):
                pieces.append(quad(integrand, lo, lam, limit=200)[0])
            else:
                pieces.append(quad(integrand, lo, np.inf, limit=200)[0])
        val = sum(pieces)
    elif scheme == "inverse":
        # u = 1/k: d^3k radial part k^2 dk -> u^{-4} du; integrand decays like
        # k^{-3/2}, i.e. u^{3/2} after substitution: benign near u = 0.
        def integrand_u(u):
            k = 1.0 / u
            return integrand(k) / u**2

        ulo = 0.0 if not np.isfinite(lam) else 1.0 / lam
        uhi = np.inf if K == 0.0 else 1.0 / K
        if np.isfinite(uhi):
            val = quad(integrand_u, ulo, min(uhi, 1.0), limit=200)[0]
            if uhi > 1.0:
                val += quad(integrand_u, 1.0, uhi, limit=200)[0]
        else:
            val = quad(integrand_u, ulo, 1.0, limit=200)[0]
            val += quad(integrand_u, 1.0, np.inf, limit=200)[0]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return float(np.sqrt(val))


def ir_integral(mu: float, eta_spec="one", radius: float = 1.0) -> tuple[float, bool]:
    """Infrared mass d = int_{|k|<=radius} eta(k)^2 / omega(k)^3 d^3k.

    Returns (value, divergent).  At mu = 0 the radial integrand is
    4*pi*eta(k)^2/k, which diverges at the origin exactly when eta does not
    vanish there; in that case value = inf and divergent = True.
    """
    eta = eta_profile(eta_spec)
    mu = float(mu)
    if mu == 0.0:
        # integrand ~ eta(k)^2/k near 0: finite iff eta vanishes with a
        # positive power.  Estimate the local exponent from two small probes.
        r1, r2 = 1e-9 * radius, 1e-6 * radius
        e1 = float(np.abs(eta(np.array([r1]))[0]))
        e2 = float(np.abs(eta(np.array([r2]))[0]))
        if e2 > 0.0:
            if e1 == 0.0:
                pass  # eta dies identically near 0: integrable
            else:
                p = np.log(e2 / e1) / np.log(r2 / r1)
                if p < 0.05:
                    return np.inf, True

    def integrand(k):
        w = np.sqrt(k * k + mu * mu)
        return 4.0 * np.pi * k * k * float(eta(np.array([k]))[0]) ** 2 / w**3

    val = quad(integrand, 0.0, radius, limit=200)[0]
    return float(val), False


def ir_sum(grid: ModeGrid, e: float, radius: float = 1.0) -> float:
    """Grid analogue e^2 * Sum_{|k_j| <= radius} w_j eta_j^2 / omega_j^3."""
    sel = grid.kabs <= radius
    return float(e**2 * np.sum(grid.w[sel] * grid.eta[sel] ** 2 / grid.omega[sel] ** 3))
