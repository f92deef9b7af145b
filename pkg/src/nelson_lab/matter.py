"""Lattice matter sector: boxes, masked Dirichlet domains, potentials.

Sites live on a regular grid centered at the origin, spacing ``h``, in
1 to 3 dimensions.  A boolean mask selects the Dirichlet domain; every
operator built here acts on the masked sites only, in C-order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp


class EmptyDomain:
    """Marker for a restriction that removed every site.

    Downstream energy estimates treat this domain as having ground
    energy +inf (nothing to minimize over).
    """

    def __repr__(self):  # pragma: no cover
        return "EMPTY"


EMPTY = EmptyDomain()


@dataclass(frozen=True)
class MatterGrid:
    """Regular box lattice with a Dirichlet mask and potential samples.

    sites : (n_total, dim) positions of every box site, C-order
    mask  : (n_total,) bool, True on the active (Dirichlet) domain
    V     : (n_total,) real potential samples on all box sites
    """

    shape: tuple
    h: float
    sites: np.ndarray
    mask: np.ndarray
    V: np.ndarray

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_total(self):
        return int(np.prod(self.shape))

    @property
    def n_active(self):
        return int(self.mask.sum())

    @property
    def active(self):
        """Indices (into the box enumeration) of the active sites."""
        return np.flatnonzero(self.mask)

    @property
    def active_sites(self):
        return self.sites[self.mask]

    @property
    def active_V(self):
        return self.V[self.mask]

    @property
    def radii(self):
        return np.linalg.norm(self.sites, axis=1)


def potential(spec, sites):
    """Evaluate a potential spec on an (n, dim) array of positions.

    spec is one of
      "zero"
      ("well", depth, radius)          depth on |x| <= radius, 0 outside
      ("harmonic_power", a, b, p[, rho])   (a^2/2)|x|^(2p) - b
      callable                          applied to the (n, dim) array

    The harmonic_power formula is evaluated globally; rho marks where the
    growth bound is claimed and does not change the samples.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None]
    r = np.linalg.norm(sites, axis=1)
    if callable(spec):
        out = np.asarray(spec(sites), dtype=float)
        if out.shape != (sites.shape[0],):
            raise ValueError("callable potential must return one value per site")
        return out
    if spec == "zero":
        return np.zeros(sites.shape[0])
    if isinstance(spec, tuple) and spec and spec[0] == "well":
        _, depth, radius = spec
        return np.where(r <= radius, float(depth), 0.0)
    if isinstance(spec, tuple) and spec and spec[0] == "harmonic_power":
        a, b, p = spec[1], spec[2], spec[3]
        if not all(np.isfinite([a, b, p])):
            raise ValueError("harmonic_power parameters must be finite")
        return 0.5 * a**2 * r ** (2.0 * p) - b
    raise ValueError(f"unknown potential spec: {spec!r}")


def build_matter_grid(shape, spacing, V="zero", mask=None):
    """Box lattice centered at the origin with Dirichlet exterior.

    shape   : sites per axis, e.g. (9,) or (5, 5, 5); dim = len(shape) in 1..3
    spacing : lattice constant h > 0
    V       : potential spec (see ``potential``) or explicit samples
    mask    : optional bool array over all box sites; default all active
    """
    shape = tuple(int(n) for n in shape)
    if not 1 <= len(shape) <= 3 or any(n < 1 for n in shape):
        raise ValueError("shape must be 1 to 3 positive axis lengths")
    h = float(spacing)
    if not h > 0:
        raise ValueError("spacing must be positive")
    axes = [(np.arange(n) - 0.5 * (n - 1)) * h for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([m.reshape(-1) for m in mesh], axis=1)
    n_total = sites.shape[0]
    if mask is None:
        mask = np.ones(n_total, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape != (n_total,):
            raise ValueError("mask must cover every box site")
    if not mask.any():
        raise ValueError("mask is empty; no Dirichlet domain")
    if isinstance(V, np.ndarray):
        samples = np.asarray(V, dtype=float).reshape(-1)
        if samples.shape != (n_total,):
            raise ValueError("potential samples must cover every box site")
    else:
        samples = potential(V, sites)
    if not np.all(np.isfinite(samples[mask])):
        raise ValueError("potential must be finite on the active domain")
    sites.setflags(write=False)
    mask.setflags(write=False)
    samples.setflags(write=False)
    return MatterGrid(shape=shape, h=h, sites=sites, mask=mask, V=samples)


def restrict(grid, predicate):
    """Shrink the mask to sites where predicate holds; EMPTY if none survive.

    predicate receives the (n, dim) position array and returns a bool array.
    """
    keep = np.asarray(predicate(grid.sites), dtype=bool).reshape(-1)
    if keep.shape != (grid.n_total,):
        raise ValueError("predicate must return one flag per site")
    new_mask = grid.mask & keep
    if not new_mask.any():
        return EMPTY
    new_mask.setflags(write=False)
    return replace(grid, mask=new_mask)


def _active_index_field(grid):
    """Box-shaped int array: active row index, or -1 off the domain."""
    field = np.full(grid.n_total, -1, dtype=np.int64)
    field[grid.mask] = np.arange(grid.n_active)
    return field.reshape(grid.shape)


def dirichlet_laplacian(grid):
    """(1/2)(-Delta_h) on the active sites, Dirichlet outside.

    Diagonal is dim/h^2 at every active site (the Dirichlet stencil keeps
    its full diagonal; hopping to inactive neighbors is simply dropped),
    off-diagonal -1/(2 h^2) between active nearest neighbors.
    """
    if isinstance(grid, EmptyDomain):
        raise ValueError("empty domain has no operator")
    n = grid.n_active
    idx = _active_index_field(grid)
    hop = -0.5 / grid.h**2
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, grid.dim / grid.h**2)]
    for axis in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a = idx[tuple(lo)].reshape(-1)
        b = idx[tuple(hi)].reshape(-1)
        both = (a >= 0) & (b >= 0)
        a, b = a[both], b[both]
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(a.size, hop)] * 2
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def forward_difference(grid):
    """Per-axis forward-difference operators over every lattice edge.

    For axis a the rows run over all edges (x, x + h e_a) with at least
    one active endpoint (boundary edges included, the exterior value is
    pinned to 0), and D psi = (psi_upper - psi_lower)/h.  This makes

        (1/2) sum_a D_a^T D_a  ==  dirichlet_laplacian(grid)

    an exact matrix identity, so covariant forms assembled from D stay
    nonnegative by construction.
    """
    if isinstance(grid, EmptyDomain):
        raise ValueError("empty domain has no operator")
    n = grid.n_active
    idx = _active_index_field(grid)
    ops = []
    inv_h = 1.0 / grid.h
    for axis in range(grid.dim):
        pad = [(0, 0)] * grid.dim
        pad[axis] = (1, 1)
        padded = np.pad(idx, pad, constant_values=-1)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lower = padded[tuple(lo)].reshape(-1)
        upper = padded[tuple(hi)].reshape(-1)
        touch = (lower >= 0) | (upper >= 0)
        lower, upper = lower[touch], upper[touch]
        n_edges = lower.size
        rows, cols, vals = [], [], []
        live_up = upper >= 0
        rows.append(np.flatnonzero(live_up))
        cols.append(upper[live_up])
        vals.append(np.full(int(live_up.sum()), inv_h))
        live_lo = lower >= 0
        rows.append(np.flatnonzero(live_lo))
        cols.append(lower[live_lo])
        vals.append(np.full(int(live_lo.sum()), -inv_h))
        ops.append(
            sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_edges, n),
            )
        )
    return ops


def dump_csv(grid, path):
    """Write site index, coordinates, mask flag and V for every box site."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["index"] + [f"x{a + 1}" for a in range(grid.dim)] + ["mask", "V"]
        )
        for i in range(grid.n_total):
            writer.writerow(
                [i]
                + [f"{c:.17g}" for c in grid.sites[i]]
                + [int(grid.mask[i]), f"{grid.V[i]:.17g}"]
            )
