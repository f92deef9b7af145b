"""Truncated bosonic Fock space over a mode grid.

States are finitely supported occupation vectors n = (n_1..n_M) with total
Sum n_j <= cap, ordered graded-lexicographically (by total, then ascending
lex).  Smearing uses the grid weights:  a(f) = Sum_j sqrt(w_j) conj(f_j) a_j,
so the canonical commutator [a(f), a+(g)] = <f, g> holds exactly on every
state with one unit of headroom (total <= cap-1); the top sector carries the
truncation defect.

Conventions:
  exp_vector(h)  amplitudes  prod_j (sqrt(w_j) h_j)^{n_j} / sqrt(n_j!)
  weyl(f)        exp(a+(f) - a(f)); exactly unitary even truncated (the
                 truncated generator is still skew-hermitian), trustworthy
                 in action for ||f||^2 <~ cap/4
  ft_operator    F_t(h) = exp(a+(h)) exp(-t dGamma(omega)); the creation
                 series is nilpotent on the truncated space, hence exact
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm as sparse_expm
from scipy.linalg import expm as dense_expm
from scipy.special import gammainc

from .modes import ModeGrid

__all__ = [
    "FockBasis",
    "enumerate_basis",
    "annihilate",
    "create",
    "dGamma",
    "field_op",
    "weyl",
    "gamma_phase",
    "exp_vector",
    "ft_operator",
    "QSpaceRep",
    "qspace",
    "lp_norm",
]

_MAX_DIM = 2_000_000


def _compositions(total: int, m: int):
    """All occupation tuples with given total over m modes, ascending lex."""
    if m == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, m - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class FockBasis:
    m: int
    cap: int
    occ: np.ndarray  # (dim, m) int32, graded lex
    _index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return self.occ.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.occ.sum(axis=1)

    def index_of(self, occ_tuple) -> int:
        key = np.asarray(occ_tuple, dtype=np.int32).tobytes()
        return self._index[key]


def enumerate_basis(m: int, cap: int) -> FockBasis:
    """Occupation basis with total boson number <= cap over m modes.

    dim = C(m + cap, m); refuses to build beyond 2e6 states.
    """
    if m < 1 or cap < 0:
        raise ValueError("need m >= 1 modes and cap >= 0")
    dim = comb(m + cap, m)
    if dim > _MAX_DIM:
        raise ValueError(f"basis dimension {dim} exceeds limit {_MAX_DIM}")
    rows = []
    for total in range(cap + 1):
        rows.extend(_compositions(total, m))
    occ = np.array(rows, dtype=np.int32)
    assert occ.shape[0] == dim
    index = {occ[i].tobytes(): i for i in range(dim)}
    return FockBasis(m=m, cap=cap, occ=occ, _index=index)


def _lower_single(basis: FockBasis, j: int) -> sp.csr_matrix:
    """Elementary a_j in the occupation basis (no weight factors)."""
    occ = basis.occ
    src = np.nonzero(occ[:, j] > 0)[0]
    vals = np.sqrt(occ[src, j].astype(float))
    tgt_occ = occ[src].copy()
    tgt_occ[:, j] -= 1
    tgt = np.fromiter(
        (basis._index[row.tobytes()] for row in tgt_occ), dtype=np.int64, count=len(src)
    )
    return sp.csr_matrix((vals, (tgt, src)), shape=(basis.dim, basis.dim))


def annihilate(f: np.ndarray, basis: FockBasis, grid: ModeGrid) -> sp.csr_matrix:
    """Smeared annihilator a(f) = Sum_j sqrt(w_j) conj(f_j) a_j."""
    f = np.asarray(f)
    if f.shape != (basis.m,):
        raise ValueError("kernel length must match mode count")
    coef = np.sqrt(grid.w) * np.conj(f)
    out = None
    for j in np.nonzero(coef != 0)[0]:
        term = coef[j] * _lower_single(basis, int(j))
        out = term if out is None else out + term
    if out is None:
        out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    return out.astype(complex).tocsr()


def create(f: np.ndarray, basis: FockBasis, grid: ModeGrid) -> sp.csr_matrix:
    """a+(f) = a(f)* (matrix elements raising past the cap are dropped)."""
    return annihilate(f, basis, grid).conj().T.tocsr()


def dGamma(kappa: np.ndarray, basis: FockBasis) -> sp.csr_matrix:
    """Second quantization of a diagonal one-boson multiplier kappa(k_j)."""
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (basis.m,):
        raise ValueError("kappa length must match mode count")
    diag = basis.occ.astype(float) @ kappa
    return sp.diags(diag).tocsr()


def field_op(f: np.ndarray, basis: FockBasis, grid: ModeGrid) -> sp.csr_matrix:
    """Segal field phi(f) = a+(f) + a(f); hermitian for every kernel f."""
    a = annihilate(f, basis, grid)
    return (a + a.conj().T).tocsr()


def weyl(f: np.ndarray, basis: FockBasis, grid: ModeGrid) -> tuple[sp.csr_matrix, float]:
    """Weyl displacement W(f) = exp(a+(f) - a(f)) with a truncation-quality estimate.

    Returns (W, quality): quality is the Poisson(||f||^2) tail mass beyond the
    cap — the weight a coherent displacement of the vacuum would lose to
    truncation.  Stay inside ||f||^2 <= cap/4 for trustworthy action.
    """
    a = annihilate(f, basis, grid)
    gen = (a.conj().T - a).tocsc()
    if basis.dim <= 600:
        w = sp.csr_matrix(dense_expm(gen.toarray()))
    else:
        w = sparse_expm(gen).tocsr()
    lam = float(np.sum(grid.w * np.abs(f) ** 2))
    quality = float(gammainc(basis.cap + 1, lam)) if lam > 0 else 0.0
    return w, quality


def gamma_phase(x: np.ndarray, basis: FockBasis, grid: ModeGrid) -> sp.csr_matrix:
    """Second-quantized translation phase Gamma(e_x): diagonal exp(-i (Sum n_j k_j) . x).

    Only this one-parameter family of second-quantized unitaries is provided;
    general Gamma(U) is out of scope here.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[-1]
    ptot = basis.occ.astype(float) @ grid.k[:, :d]  # (dim, d) total momentum
    return sp.diags(np.exp(-1j * (ptot @ x))).tocsr()


_FACT = np.array([float(factorial(n)) for n in range(171)])


def exp_vector(h: np.ndarray, basis: FockBasis, grid: ModeGrid) -> np.ndarray:
    """Truncated exponential (coherent-ray) vector eps(h).

    Amplitude at occupation n:  prod_j (sqrt(w_j) h_j)^{n_j} / sqrt(n_j!).
    <eps(g), eps(h)> -> exp(<g, h>) as cap grows.
    """
    c = np.sqrt(grid.w) * np.asarray(h, dtype=complex)
    amps = np.ones(basis.dim, dtype=complex)
    occ = basis.occ
    for j in range(basis.m):
        nj = occ[:, j]
        amps *= np.power(c[j], nj) / np.sqrt(_FACT[nj])
    return amps


def ft_operator(h: np.ndarray, t: float, basis: FockBasis, grid: ModeGrid) -> sp.csr_matrix:
    """F_t(h) = exp(a+(h)) exp(-t dGamma(omega)).

    The creation exponential terminates at order cap on the truncated space,
    so F_t eps(g) = eps(h + exp(-t omega) g) holds exactly there (up to the
    coherent tail already lost to truncation).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    ad = create(h, basis, grid)
    series = sp.identity(basis.dim, dtype=complex, format="csr")
    eye = sp.identity(basis.dim, dtype=complex, format="csr")
    for n in range(basis.cap, 0, -1):
        series = eye + (ad @ series) / n
    decay = sp.diags(np.exp(-t * (basis.occ.astype(float) @ grid.omega)))
    return (series @ decay).tocsr()


# ------------------------------------------------------------------ Q-space

@dataclass(frozen=True)
class QSpaceRep:
    """Joint position (Hermite) representation of the conjugate-even fields.

    For each antipodal mode pair (j, j*) two unit real-subspace kernels are
    chosen: c_p = (delta_j + delta_j*)/sqrt(2), s_p = i(delta_j - delta_j*)/sqrt(2)
    (coordinates in the weighted inner product).  The fields q_alpha =
    phi(basis_alpha) commute pairwise and are iid standard Gaussians in the
    vacuum; this class carries the unitary from occupation amplitudes to
    values on a tensor Gauss-Hermite grid distributing that Gaussian measure.

    transform:  (n_nodes, dim) matrix; row i is evaluation at node i.
    weights:    (n_nodes,) probability weights (sum to 1).
    """

    basis: FockBasis
    grid: ModeGrid
    pairs: np.ndarray          # (M/2, 2) canonical (j, j*) with j < j*
    order: int                 # 1-d Hermite rule size per real mode
    nodes1d: np.ndarray        # (order,)
    transform: np.ndarray      # (n_nodes, dim) complex
    mix: np.ndarray            # (dim, dim) complex: complex-occ -> real-occ
    weights: np.ndarray        # (n_nodes,) probability weights
    node_coords: np.ndarray    # (n_nodes, M) real coordinates q_alpha

    @property
    def n_real_modes(self) -> int:
        return self.basis.m

    def real_components(self, f: np.ndarray) -> np.ndarray:
        """Coefficients r_alpha = <basis_alpha, f>; real iff f is conjugate-even."""
        f = np.asarray(f, dtype=complex)
        out = np.empty(self.basis.m, dtype=complex)
        w = self.grid.w
        for p, (j, js) in enumerate(self.pairs):
            # <c_p, f> and <s_p, f> in the weighted product; c,s have values
            # 1/sqrt(2 w_j) etc. so the weights reduce to sqrt(w/2) factors
            swj = np.sqrt(w[j] / 2.0)
            out[2 * p] = swj * (f[j] + f[js])
            out[2 * p + 1] = swj * (-1j * f[j] + 1j * f[js])
        return out

    def to_position(self, amps: np.ndarray) -> np.ndarray:
        return self.transform @ amps

    def from_position(self, values: np.ndarray) -> np.ndarray:
        # adjoint wrt the weighted node measure inverts the isometry
        return self.transform.conj().T @ (self.weights * values)

    def lp_norm(self, amps: np.ndarray, p: float) -> float:
        vals = np.abs(self.to_position(amps))
        return float(np.sum(self.weights * vals**p) ** (1.0 / p))


def _hermite_table(order: int, nmax: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized probabilists' Hermite values He_n(x)/sqrt(n!) on a GH grid."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / np.sqrt(2.0 * np.pi)  # probability weights for N(0,1)
    tab = np.zeros((order, nmax + 1))
    tab[:, 0] = 1.0
    if nmax >= 1:
        tab[:, 1] = x
    for n in range(1, nmax):
        tab[:, n + 1] = x * tab[:, n] - n * tab[:, n - 1]
    tab /= np.sqrt(_FACT[: nmax + 1])[None, :]
    return x, w, tab


def qspace(basis: FockBasis, grid: ModeGrid, order: int | None = None) -> QSpaceRep:
    """Build the Q-space (joint Hermite) representation.

    Requires the grid pairing to be fixed-point free and to cover all modes
    (odd unpaired modes are rejected).  order defaults to cap + 2, enough for
    the evaluation map to be unitary on the truncated space (Gauss-Hermite
    exactness degree 2*order-1 > 2*cap).
    """
    if basis.m != grid.m:
        raise ValueError("basis and grid mode counts differ")
    if np.any(grid.pair == np.arange(grid.m)):
        raise ValueError("pairing has a fixed point; cannot house conjugate-even fields")
    order = int(order) if order is not None else basis.cap + 2
    if order < basis.cap + 1:
        raise ValueError("Hermite order must be at least cap + 1 for unitarity")

    pairs = np.array([(j, js) for j, js in enumerate(grid.pair) if j < js], dtype=int)
    if 2 * len(pairs) != basis.m:
        raise ValueError("odd unpaired modes present")
    n_nodes = order ** basis.m
    if n_nodes > _MAX_DIM or n_nodes * basis.dim > 6e7:
        raise ValueError("quadrature grid too large; lower the order or mode count")

    # --- mixing matrix: complex-mode occupations -> real-mode occupations
    # a+_j = (b+_c - i b+_s)/sqrt(2),  a+_j* = (b+_c + i b+_s)/sqrt(2)
    dim = basis.dim
    mix = np.zeros((dim, dim), dtype=complex)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for col in range(dim):
        n = basis.occ[col]
        # dict: real occupation tuple (c0,s0,c1,s1,..) -> amplitude
        acc = {(): 1.0 + 0.0j}
        for p, (j, js) in enumerate(pairs):
            nj, njs = int(n[j]), int(n[js])
            # expand (b_c - i b_s)^nj (b_c + i b_s)^njs / sqrt(nj! njs!)
            local = {}
            for r in range(nj + 1):
                for rp in range(njs + 1):
                    mc, ms = r + rp, (nj - r) + (njs - rp)
                    coef = (
                        comb(nj, r)
                        * comb(njs, rp)
                        * (-1j) ** (nj - r)
                        * (1j) ** (njs - rp)
                    )
                    key = (mc, ms)
                    local[key] = local.get(key, 0.0) + coef
                # normalization applied after loop
            norm = inv_sqrt2 ** (nj + njs) / np.sqrt(_FACT[nj] * _FACT[njs])
            new_acc = {}
            for tail, amp in acc.items():
                for (mc, ms), coef in local.items():
                    amp2 = amp * norm * coef * np.sqrt(_FACT[mc] * _FACT[ms])
                    key = tail + (mc, ms)
                    new_acc[key] = new_acc.get(key, 0.0) + amp2
            acc = new_acc
        for tup, amp in acc.items():
            mix[basis.index_of(tup), col] = amp

    # --- Hermite evaluation on the tensor grid
    x1, w1, tab = _hermite_table(order, basis.cap)
    idx = np.indices((order,) * basis.m).reshape(basis.m, -1)  # (M, n_nodes)
    weights = np.prod(w1[idx], axis=0)
    coords = x1[idx].T  # (n_nodes, M)
    V = np.ones((n_nodes, dim))
    occ = basis.occ
    for alpha in range(basis.m):
        V *= tab[idx[alpha]][:, occ[:, alpha]]
    transform = V.astype(complex) @ mix
    return QSpaceRep(
        basis=basis,
        grid=grid,
        pairs=pairs,
        order=order,
        nodes1d=x1,
        transform=transform,
        mix=mix,
        weights=weights,
        node_coords=coords,
    )


def lp_norm(amps: np.ndarray, rep: QSpaceRep, p: float) -> float:
    """L^p norm of a truncated Fock vector in its Q-space realization."""
    if p <= 0:
        raise ValueError("p must be positive")
    return rep.lp_norm(np.asarray(amps, dtype=complex), p)
