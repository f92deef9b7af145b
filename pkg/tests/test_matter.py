import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nelson_lab.matter import (
    EMPTY,
    EmptyDomain,
    build_matter_grid,
    dirichlet_laplacian,
    dump_csv,
    forward_difference,
    potential,
    restrict,
)


def chain_eigs(n, h):
    # discrete sine spectrum of (1/2)(-Delta) on an n-site Dirichlet chain
    m = np.arange(1, n + 1)
    return (1.0 - np.cos(m * np.pi / (n + 1))) / h**2


# ------------------------------------------------------------- construction

def test_build_shapes_and_centering():
    g = build_matter_grid((4, 3), 0.5)
    assert g.dim == 2 and g.n_total == 12 and g.n_active == 12
    # centered at the origin, C-order (last axis fastest)
    assert np.allclose(g.sites.sum(axis=0), 0.0)
    assert np.allclose(g.sites[0], [-0.75, -0.5])
    assert np.allclose(g.sites[1], [-0.75, 0.0])


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_matter_grid((3, 3, 3, 3), 0.1)
    with pytest.raises(ValueError):
        build_matter_grid((4,), -1.0)
    with pytest.raises(ValueError):
        build_matter_grid((4,), 1.0, mask=np.zeros(4, dtype=bool))
    with pytest.raises(ValueError):
        build_matter_grid((4,), 1.0, V=np.array([0.0, np.inf, 0.0, 0.0]))


# ---------------------------------------------------------------- potential

def test_potential_zero_and_well():
    g = build_matter_grid((5,), 1.0)
    assert np.all(potential("zero", g.sites) == 0.0)
    v = potential(("well", -5.0, 1.0), g.sites)
    # sites at -2,-1,0,1,2: the well of radius 1 holds the middle three
    assert v.tolist() == [0.0, -5.0, -5.0, -5.0, 0.0]


def test_potential_growth_class_value():
    # (a^2/2)|x|^(2p) - b with a=1, b=0, p=1 evaluates to 2 at |x| = 2
    v = potential(("harmonic_power", 1.0, 0.0, 1.0), np.array([[2.0, 0.0, 0.0]]))
    assert v[0] == pytest.approx(2.0, abs=1e-15)
    v = potential(("harmonic_power", 1.5, 0.25, 2.0), np.array([[0.0, 3.0]]))
    assert v[0] == pytest.approx(0.5 * 1.5**2 * 3.0**4 - 0.25, rel=1e-15)


def test_potential_callable_and_errors():
    g = build_matter_grid((4,), 0.5)
    v = potential(lambda x: x[:, 0] ** 2, g.sites)
    assert np.allclose(v, g.sites[:, 0] ** 2)
    with pytest.raises(ValueError):
        potential("nope", g.sites)
    with pytest.raises(ValueError):
        potential(("harmonic_power", np.inf, 0.0, 1.0), g.sites)


# ---------------------------------------------------------------- Laplacian

def test_single_site_stencil():
    for shape in [(1,), (1, 1), (1, 1, 1)]:
        g = build_matter_grid(shape, 0.25)
        L = dirichlet_laplacian(g).toarray()
        assert L.shape == (1, 1)
        assert L[0, 0] == pytest.approx(len(shape) / 0.25**2, rel=1e-15)


def test_constant_vector_interior():
    g = build_matter_grid((31,), 0.2)
    L = dirichlet_laplacian(g)
    r = L @ np.ones(31)
    # interior stencil rows cancel exactly; boundary rows feel the wall
    assert np.all(r[1:-1] == 0.0)
    assert r[0] == pytest.approx(0.5 / 0.2**2, rel=1e-15)
    assert r[-1] == pytest.approx(0.5 / 0.2**2, rel=1e-15)


def test_chain_sine_eigenpairs_residual():
    # independent oracle: explicit sine vectors are exact eigenvectors
    n, h = 13, 0.3
    g = build_matter_grid((n,), h)
    L = dirichlet_laplacian(g)
    lam = chain_eigs(n, h)
    for m in (1, 2, 5, n):
        v = np.sin(m * np.pi * np.arange(1, n + 1) / (n + 1))
        v /= np.linalg.norm(v)
        assert np.linalg.norm(L @ v - lam[m - 1] * v) < 1e-12


def test_chain_full_spectrum():
    n, h = 17, 0.45
    g = build_matter_grid((n,), h)
    ev = np.linalg.eigvalsh(dirichlet_laplacian(g).toarray())
    assert np.allclose(ev, np.sort(chain_eigs(n, h)), atol=1e-12)


def test_chain_lowest_approaches_continuum():
    # fixed box, shrinking spacing: lowest eigenvalue -> (1/2)(pi/Lbox)^2
    box = 3.0
    errs = []
    for n in (10, 20, 40):
        h = box / (n + 1)
        lo = chain_eigs(n, h)[0]
        errs.append(abs(lo - 0.5 * (np.pi / box) ** 2))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_2d_spectrum_is_separable_sum():
    g = build_matter_grid((5, 7), 0.3)
    ev = np.linalg.eigvalsh(dirichlet_laplacian(g).toarray())
    ex = np.sort(np.add.outer(chain_eigs(5, 0.3), chain_eigs(7, 0.3)).reshape(-1))
    assert np.allclose(ev, ex, atol=1e-11)


def test_laplacian_symmetric_psd():
    rng = np.random.default_rng(3)
    mask = rng.random(5 * 6) > 0.3
    g = build_matter_grid((5, 6), 0.4, mask=mask)
    L = dirichlet_laplacian(g).toarray()
    assert np.abs(L - L.T).max() == 0.0
    assert np.linalg.eigvalsh(L).min() > 0.0  # Dirichlet gap


# ----------------------------------------------------- forward differences

def test_half_dtd_equals_laplacian_exactly():
    # all-edges forward differences reproduce the Dirichlet stencil
    rng = np.random.default_rng(11)
    mask = rng.random(6 * 5) > 0.35
    g = build_matter_grid((6, 5), 0.7, mask=mask)
    L = dirichlet_laplacian(g)
    D = forward_difference(g)
    S = 0.5 * sum((d.T @ d for d in D))
    assert np.abs((S - L).toarray()).max() < 1e-13


def test_forward_difference_counts_boundary_edges():
    g = build_matter_grid((3,), 1.0)
    (D,) = forward_difference(g)
    # edges: (out,1),(1,2),(2,3),(3,out)
    assert D.shape == (4, 3)
    assert np.allclose(D.toarray(), [[1, 0, 0], [-1, 1, 0], [0, -1, 1], [0, 0, -1]])


def test_forward_difference_gradient_value():
    g = build_matter_grid((4,), 0.5)
    (D,) = forward_difference(g)
    psi = g.sites[:, 0] ** 2
    interior = (psi[1:] - psi[:-1]) / 0.5
    assert np.allclose((D @ psi)[1:-1], interior)


# -------------------------------------------------------------- restriction

def test_restrict_identity_and_ball():
    g = build_matter_grid((7, 7), 0.5)
    same = restrict(g, lambda x: np.ones(x.shape[0], dtype=bool))
    assert np.array_equal(same.mask, g.mask)
    outer = restrict(g, lambda x: np.linalg.norm(x, axis=1) > 1.0)
    inside = np.linalg.norm(g.sites, axis=1) <= 1.0
    assert outer.n_active == g.n_active - inside.sum()
    assert not outer.mask[inside].any()


def test_restrict_to_nothing_returns_marker():
    g = build_matter_grid((5,), 0.5)
    out = restrict(g, lambda x: np.linalg.norm(x, axis=1) > 100.0)
    assert isinstance(out, EmptyDomain)
    assert out is EMPTY
    with pytest.raises(ValueError):
        dirichlet_laplacian(out)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 6), st.integers(3, 6))
def test_domain_monotone_ground_energy(seed, nx, ny):
    # shrinking the Dirichlet domain never lowers the ground energy
    rng = np.random.default_rng(seed)
    g = build_matter_grid((nx, ny), 0.5, V=("well", -2.0, 1.0))
    keep = rng.random(g.n_total) > 0.4
    keep[rng.integers(g.n_total)] = True  # never empty
    sub = restrict(g, lambda x, k=keep: k)
    e_full = np.linalg.eigvalsh(
        dirichlet_laplacian(g).toarray() + np.diag(g.active_V)
    )[0]
    e_sub = np.linalg.eigvalsh(
        dirichlet_laplacian(sub).toarray() + np.diag(sub.active_V)
    )[0]
    assert e_sub >= e_full - 1e-11


# --------------------------------------------------------------------- dump

def test_dump_csv_roundtrip(tmp_path):
    g = build_matter_grid((3, 2), 0.5, V=("well", -1.0, 0.6))
    path = tmp_path / "grid.csv"
    dump_csv(g, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().strip().split("\n")
    assert lines[0] == "index,x1,x2,mask,V"
    assert len(lines) == 1 + g.n_total
    row = lines[1].split(",")
    assert int(row[0]) == 0 and int(row[3]) == 1
    assert float(row[1]) == g.sites[0, 0] and float(row[4]) == g.V[0]
