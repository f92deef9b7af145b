"""Coupled particle-field operators on matter (x) Fock.

Index convention is site-major: the coupled vector stacks one Fock block
per active matter site, i.e. operators are kron(matter_op, fock_op).

The covariant kinetic form and the window-split interaction follow the
lattice conventions of :mod:`nelson_lab.matter`: forward differences over
all edges, zeroth-order terms evaluated at the left (lower) endpoint of
each edge.  For matter dimension d < 3 every axis-resolved kernel uses
the first d components of k; the scalar measure, dispersion and window
kernels keep their 3-d structure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .fock import FockBasis, annihilate, create, dGamma, field_op, weyl
from .matter import EmptyDomain, MatterGrid, dirichlet_laplacian, forward_difference
from .modes import ModeGrid, counterterm, kernel_beta, kernel_f

WEYL_TRUST = 1e-6  # truncation-quality ceiling before gross_unitary warns


@dataclass(frozen=True)
class CoupledHamiltonian:
    matter: MatterGrid
    fock: FockBasis
    grid: ModeGrid
    matrix: sp.csr_matrix
    meta: dict

    @property
    def dim(self):
        return self.matrix.shape[0]


def _axis_components(grid, matter):
    """k restricted to the matter axes, shape (M, d)."""
    return grid.k[:, : matter.dim]


def _site_blockdiag(matter, fock, grid, kern):
    """Block-diagonal field operator, site x carrying phi(e_x * kern)."""
    blocks = [
        field_op(grid.plane_shift(x) * kern, fock, grid)
        for x in matter.active_sites
    ]
    return sp.block_diag(blocks, format="csr")


def _edge_of_site(D):
    """Row index of the forward edge whose lower endpoint is each site."""
    coo = D.tocoo()
    lower = coo.data < 0
    edge = np.empty(D.shape[1], dtype=np.int64)
    edge[coo.col[lower]] = coo.row[lower]
    return edge


def _left_point_field(matter, fock, grid, D, kern):
    """Edge-indexed operator placing phi(e_x * kern) at each lower endpoint.

    Shape (n_edges*F, n_sites*F); rows of edges without an active lower
    endpoint stay zero (the exterior wave function is pinned to 0).
    """
    F = fock.dim
    edge = _edge_of_site(D)
    rows, cols, vals = [], [], []
    for i, x in enumerate(matter.active_sites):
        phi = field_op(grid.plane_shift(x) * kern, fock, grid).tocoo()
        rows.append(edge[i] * F + phi.row)
        cols.append(i * F + phi.col)
        vals.append(phi.data)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(D.shape[0] * F, D.shape[1] * F),
    )


def assemble_nelson(matter, fock, grid, e, lam):
    """Cutoff coupled operator on matter (x) Fock.

    H = (T + V) (x) Id + Id (x) dGamma(omega)
        + sum_x P_x (x) phi(e_x f_lam) + E_lam_ren * Id
    """
    if isinstance(matter, EmptyDomain):
        raise ValueError("empty matter domain")
    if not np.isfinite(lam):
        raise ValueError(
            "no operator is assembled at infinite cutoff; "
            "use assemble_gross or renorm_sweep"
        )
    F = sp.identity(fock.dim, format="csr")
    T = dirichlet_laplacian(matter) + sp.diags(matter.active_V)
    en_ren = counterterm(grid, e, lam)
    H = (
        sp.kron(T, F, format="csr")
        + sp.kron(sp.identity(matter.n_active), dGamma(grid.omega, fock), format="csr")
        + _site_blockdiag(matter, fock, grid, kernel_f(grid, e, lam))
        + en_ren * sp.identity(matter.n_active * fock.dim, format="csr")
    )
    meta = {
        "e": float(e),
        "mu": grid.mu,
        "K": None,
        "Lambda": float(lam),
        "counterterm": en_ren,
        "representation": "nelson",
    }
    return CoupledHamiltonian(matter=matter, fock=fock, grid=grid, matrix=H.tocsr(), meta=meta)


def gross_unitary(matter, fock, grid, e, K, lam):
    """Site-diagonal dressing unitary, block W(e_x beta_{K,lam}) at site x.

    Returns (U, quality); quality is the worst per-site truncation-tail
    estimate from weyl.  A quality above WEYL_TRUST triggers a warning.
    """
    beta = kernel_beta(grid, e, K, lam)
    blocks, quality = [], 0.0
    for x in matter.active_sites:
        W, q = weyl(grid.plane_shift(x) * beta, fock, grid)
        blocks.append(W)
        quality = max(quality, q)
    if quality > WEYL_TRUST:
        warnings.warn(
            f"dressing kernel leaves the cap's trust domain (quality {quality:.2e})",
            stacklevel=2,
        )
    return sp.block_diag(blocks, format="csr"), quality


def assemble_gross(matter, fock, grid, e, K, lam=np.inf):
    """Dressed coupled operator; lam may be inf (the renormalized object).

    Quadratic form: (1/2) sum_a ||D_a Psi + i phi(e_x m_a beta) Psi||^2
    over all edges (left-point zeroth order), plus dGamma(omega) + V,
    plus per site phi(e_x f_K) + (1/2) phi(e_x m^2 beta), plus the scalar
    E_K_ren - (1/2)||m beta||^2.  The covariant kernels m_a beta use the
    matter axes; the scalar m^2 = |k|^2 terms keep all three components,
    matching the window identity (omega + |k|^2/2) beta = f_lam - f_K
    that the site-diagonal dressing produces.
    """
    if isinstance(matter, EmptyDomain):
        raise ValueError("empty matter domain")
    if not np.isfinite(K):
        raise ValueError("dressing window start K must be finite")
    F = fock.dim
    I_F = sp.identity(F, format="csr")
    n = matter.n_active
    beta = kernel_beta(grid, e, K, lam)
    m_ax = _axis_components(grid, matter)
    m2 = grid.kabs**2
    D = forward_difference(matter)
    kinetic = None
    for a in range(matter.dim):
        C = sp.kron(D[a], I_F, format="csr") + 1j * _left_point_field(
            matter, fock, grid, D[a], m_ax[:, a] * beta
        )
        term = 0.5 * (C.conj().T @ C)
        kinetic = term if kinetic is None else kinetic + term
    en_ren = counterterm(grid, e, K)
    mbeta_sq = float(np.sum(grid.w * m2 * np.abs(beta) ** 2))
    H = (
        kinetic
        + sp.kron(sp.diags(matter.active_V), I_F, format="csr")
        + sp.kron(sp.identity(n), dGamma(grid.omega, fock), format="csr")
        + _site_blockdiag(matter, fock, grid, kernel_f(grid, e, K) + 0.5 * m2 * beta)
        + (en_ren - 0.5 * mbeta_sq) * sp.identity(n * F, format="csr")
    )
    meta = {
        "e": float(e),
        "mu": grid.mu,
        "K": float(K),
        "Lambda": float(lam),
        "counterterm": en_ren,
        "representation": "gross",
    }
    return CoupledHamiltonian(matter=matter, fock=fock, grid=grid, matrix=H.tocsr(), meta=meta)


def interaction_split_form(Psi, matter, fock, grid, e, K, L, lam):
    """Window-split interaction functional v_{K,L,lam}[Psi].

    Evaluates, per site and matter axis with g = e_x m_a beta_{L,lam} and
    h = e_x m_a beta_{K,L},

        2 Re<a(g)Psi, phi(h)Psi> + ||a(g)Psi||^2 + Re<a*(g)Psi, a(g)Psi>
        + Re<D_a Psi, i phi(g) Psi>_edges + (1/2)<Psi, phi(e_x m^2 beta_{L,lam}) Psi>

    plus, for matter dimension d < 3, the transverse constant
    -(1/2)||m_perp beta_{L,lam}||^2 ||Psi||^2 carried by the k components
    with no matter axis.  The D terms are the lattice pairing of the
    continuum cross term 2 Re<a(g)Psi, -i d_a Psi>; keeping them in
    gauge-paired form absorbs the forward-difference commutator, so

        gross_form(K, lam)[Psi] = gross_form(K, L)[Psi] + v[Psi]

    is exact (to rounding) whenever Psi leaves one unit of occupation
    headroom below the cap.
    """
    if not 0 <= K <= L <= lam:
        raise ValueError("windows must satisfy 0 <= K <= L <= lam")
    F = fock.dim
    beta_out = kernel_beta(grid, e, L, lam)   # g window
    beta_in = kernel_beta(grid, e, K, L)      # h window
    m_ax = _axis_components(grid, matter)
    m2 = grid.kabs**2
    m2_perp = m2 - np.sum(m_ax**2, axis=1)
    D = forward_difference(matter)
    Psi = np.asarray(Psi).reshape(matter.n_active, F)
    norm_sq = float(np.vdot(Psi, Psi).real)
    total = -0.5 * float(np.sum(grid.w * m2_perp * np.abs(beta_out) ** 2)) * norm_sq
    for a in range(matter.dim):
        DPsi = (sp.kron(D[a], sp.identity(F)) @ Psi.reshape(-1)).reshape(-1, F)
        edge = _edge_of_site(D[a])
        for i, x in enumerate(matter.active_sites):
            phase = grid.plane_shift(x)
            g = phase * m_ax[:, a] * beta_out
            ag = annihilate(g, fock, grid)
            agP = ag @ Psi[i]
            phP = field_op(phase * m_ax[:, a] * beta_in, fock, grid) @ Psi[i]
            total += 2.0 * np.vdot(agP, phP).real
            total += np.vdot(agP, agP).real
            total += np.vdot(create(g, fock, grid) @ Psi[i], agP).real
            # gauge-paired lattice cross term with -i D
            phig = field_op(g, fock, grid)
            total += np.vdot(DPsi[edge[i]], 1j * (phig @ Psi[i])).real
    for i, x in enumerate(matter.active_sites):
        phi2 = field_op(grid.plane_shift(x) * m2 * beta_out, fock, grid)
        total += 0.5 * np.vdot(Psi[i], phi2 @ Psi[i]).real
    return float(total)


def dirichlet_restrict(H, mask):
    """Drop all sites outside mask (a bool array over the box sites)."""
    matter = H.matter
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != (matter.n_total,):
        raise ValueError("mask must cover every box site")
    if np.any(mask & ~matter.mask):
        raise ValueError("mask must be a subset of the active domain")
    if not mask.any():
        raise ValueError("restriction removed every site")
    keep_sites = mask[matter.mask]
    F = H.fock.dim
    keep = np.repeat(keep_sites, F)
    sub = H.matrix[keep][:, keep]
    new_mask = mask.copy()
    new_mask.setflags(write=False)
    new_matter = replace(matter, mask=new_mask)
    return CoupledHamiltonian(
        matter=new_matter, fock=H.fock, grid=H.grid, matrix=sub.tocsr(), meta=dict(H.meta)
    )
