import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from nelson_lab.fock import enumerate_basis, exp_vector
from nelson_lab.hamiltonian import assemble_gross, assemble_nelson
from nelson_lab.matter import build_matter_grid, dirichlet_laplacian
from nelson_lab.modes import build_mode_grid
from nelson_lab.spectra import (
    REGISTRY,
    binding_report,
    coupling_continuity,
    decay_fit,
    gaussian_domination,
    ground_state,
    hypercontractivity_check,
    ims_residual,
    ir_scan,
    low_spectrum,
    number_decay,
    number_weighted_marginal,
    positivity_check,
    pull_through_residual,
    renorm_sweep,
    verify_all,
    verify_identity,
)


@pytest.fixture(scope="module")
def small():
    # dense path: dim 3 * 35 = 105
    grid = build_mode_grid(2, (0.4, 2.2), "single-ray", mu=1.0)
    basis = enumerate_basis(grid.m, 3)
    mat = build_matter_grid((3,), 0.35, V=("well", -1.0, 0.5))
    H = assemble_gross(mat, basis, grid, 0.3, K=0.7)
    return grid, basis, mat, H


@pytest.fixture(scope="module")
def well_grid():
    return build_mode_grid(2, (0.4, 2.2), "single-ray", mu=1.0)


# ----------------------------------------------------------- ground state

def test_ground_state_dense_matches_eigh(small):
    _, _, _, H = small
    gs = ground_state(H)
    assert gs.stats["method"] == "dense"
    ev = la.eigvalsh(H.matrix.toarray())
    assert gs.energy == pytest.approx(ev[0], abs=1e-11)
    r = np.linalg.norm(H.matrix @ gs.vector - gs.energy * gs.vector)
    assert r <= 1e-10 * max(1.0, abs(gs.energy))
    assert np.linalg.norm(gs.vector) == pytest.approx(1.0, abs=1e-12)


def test_ground_state_lanczos_agrees_with_dense(well_grid):
    basis = enumerate_basis(well_grid.m, 6)  # dim 3 * 210 = 630 > 600
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_gross(mat, basis, well_grid, 0.2, K=0.7)
    gs = ground_state(H)
    assert gs.stats["method"] == "lanczos"
    assert gs.stats["converged"]
    ev = la.eigvalsh(H.matrix.toarray())
    assert gs.energy == pytest.approx(ev[0], abs=1e-8)
    r = np.linalg.norm(H.matrix @ gs.vector - gs.energy * gs.vector)
    assert r <= 1e-6


def test_ground_state_seed_reproducible(small):
    _, _, _, H = small
    a = ground_state(H, seed=42)
    b = ground_state(H, seed=42)
    assert np.array_equal(a.vector, b.vector)
    c = ground_state(H, seed=43)
    assert c.energy == pytest.approx(a.energy, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ground_energy_is_variational_floor(seed):
    grid = build_mode_grid(2, (0.4, 2.2), "single-ray", mu=1.0)
    basis = enumerate_basis(grid.m, 2)
    mat = build_matter_grid((3,), 0.4, V="zero")
    H = assemble_gross(mat, basis, grid, 0.25, K=0.7)
    gs = ground_state(H)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(H.dim) + 1j * rng.standard_normal(H.dim)
    v /= np.linalg.norm(v)
    rayleigh = float(np.vdot(v, H.matrix @ v).real)
    assert rayleigh >= gs.energy - 1e-10


def test_low_spectrum_orders_bottom_pairs(small):
    _, _, _, H = small
    vals, vecs, stats = low_spectrum(H, k=2)
    ev = la.eigvalsh(H.matrix.toarray())
    assert np.allclose(vals, ev[:2], atol=1e-9)
    assert vals[0] <= vals[1]
    for i in range(2):
        r = np.linalg.norm(H.matrix @ vecs[:, i] - vals[i] * vecs[:, i])
        assert r <= 1e-8


# ------------------------------------------------------------ renorm sweep

@pytest.fixture(scope="module")
def sweep_e05():
    grid = build_mode_grid(6, (0.05, 4.0), "single-ray", mu=0.0)
    basis = enumerate_basis(grid.m, 3)
    mat = build_matter_grid((3,), 0.35, V="zero")
    return renorm_sweep(mat, basis, grid, 0.5, (1.0, 2.0, 4.0))


def test_renorm_sweep_decoupled_is_flat():
    grid = build_mode_grid(6, (0.05, 4.0), "single-ray", mu=0.0)
    basis = enumerate_basis(grid.m, 3)
    mat = build_matter_grid((3,), 0.35, V="zero")
    out = renorm_sweep(mat, basis, grid, 0.0, (1.0, 2.0, 4.0))
    rows = out["rows"]
    en = [r["energy_nelson"] for r in rows]
    assert max(en) - min(en) == 0.0
    for r in rows:
        assert r["counterterm"] == 0.0
        assert r["energy_gross"] == pytest.approx(r["energy_nelson"], abs=1e-9)
        assert r["bare"] == r["energy_nelson"]
        assert r["resolvent_gap"] == pytest.approx(0.0, abs=1e-8)


def test_renorm_sweep_counterterm_tracks_log(sweep_e05):
    # radial quadrature at 6 nodes sits within a few percent of the
    # closed-form massless subtraction
    for row in sweep_e05["rows"]:
        cont = 8.0 * math.pi * 0.25 * math.log(1.0 + row["lam"] / 2.0)
        assert abs(row["counterterm"] - cont) / cont < 0.05


def test_renorm_sweep_flattens_renormalized_energy(sweep_e05):
    rows = sorted(sweep_e05["rows"], key=lambda r: r["lam"])
    en = np.array([r["energy_nelson"] for r in rows])
    bare = np.array([r["bare"] for r in rows])
    # the subtracted operator converges while the bare energy runs off
    # logarithmically with the cutoff
    assert bare.max() - bare.min() > 1.0
    assert en.max() - en.min() < 0.5 * (bare.max() - bare.min())


def test_renorm_sweep_resolvent_gap_decreases(sweep_e05):
    rows = sorted(sweep_e05["rows"], key=lambda r: r["lam"])
    gaps = [r["resolvent_gap"] for r in rows]
    bn = [r["b_norm"] for r in rows]
    assert gaps[0] > gaps[1] > gaps[2] == 0.0
    assert bn[0] > bn[1] > bn[2] == 0.0
    assert sweep_e05["zeta"] >= 1.0
    assert sweep_e05["lam_ref"] == 4.0


# ------------------------------------------------------------ pull-through

def test_pull_through_dressed_headroom(well_grid):
    basis = enumerate_basis(well_grid.m, 10)  # F = 1001, dim 3003
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_nelson(mat, basis, well_grid, 0.1, lam=2.2)
    gs = ground_state(H)
    r = pull_through_residual(gs, H, j=1)
    assert r.passed
    assert r.residual <= 1e-6
    assert r.lhs > 0.0
    assert 0.8 <= r.instance["ir_ratio"] <= 1.25


def test_pull_through_gross_headroom(well_grid):
    basis = enumerate_basis(well_grid.m, 10)
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_gross(mat, basis, well_grid, 0.1, K=0.7)
    gs = ground_state(H)
    r = pull_through_residual(gs, H, j=1)
    assert r.passed
    assert r.residual <= 1e-6
    # the continuum-literal grouping is reported, not asserted: it carries
    # an O(h) centered-difference defect
    assert 1e-3 < r.instance["literal_residual"] < 1.0


def test_pull_through_literal_shrinks_with_mesh(well_grid):
    basis = enumerate_basis(well_grid.m, 6)
    lits = []
    for shape, h in (((3,), 0.35), ((5,), 0.175)):
        mat = build_matter_grid(shape, h, V="zero")
        H = assemble_gross(mat, basis, well_grid, 0.1, K=0.7)
        r = pull_through_residual(ground_state(H), H, j=1)
        assert r.residual <= 1e-5
        lits.append(r.instance["literal_residual"])
    assert lits[1] < 0.6 * lits[0]


def test_pull_through_decoupled_is_exact(well_grid):
    basis = enumerate_basis(well_grid.m, 3)
    mat = build_matter_grid((3,), 0.35, V="zero")
    for H in (assemble_nelson(mat, basis, well_grid, 0.0, lam=2.2),
              assemble_gross(mat, basis, well_grid, 0.0, K=0.7)):
        r = pull_through_residual(ground_state(H), H, j=0)
        assert r.residual == 0.0


def test_pull_through_rejects_vanishing_dispersion():
    grid = build_mode_grid(1, (1e-12, 2e-12), "single-ray", mu=0.0)
    basis = enumerate_basis(grid.m, 1)
    mat = build_matter_grid((1,), 0.4)
    H = assemble_gross(mat, basis, grid, 0.01, K=0.0)
    with pytest.raises(ValueError):
        pull_through_residual(ground_state(H), H, j=0)


# ---------------------------------------------------------------- binding

def test_binding_report_decoupled_identities(well_grid):
    basis = enumerate_basis(well_grid.m, 3)
    mat = build_matter_grid((9,), 0.3, V=("well", -2.0, 0.65))
    H = assemble_gross(mat, basis, well_grid, 0.0, K=0.7)
    rep = binding_report(H)
    assert abs(rep["energy"] - rep["matter_energy"]) < 1e-10
    assert abs(rep["slack"] - rep["energy_free"]) < 1e-10


def test_binding_report_coupled_slack_and_thresholds(well_grid):
    basis = enumerate_basis(well_grid.m, 3)
    mat = build_matter_grid((9,), 0.3, V=("well", -2.0, 0.65))
    H = assemble_gross(mat, basis, well_grid, 0.3, K=0.7)
    rep = binding_report(H, R_list=(0.5, 1.0, 5.0))
    assert rep["slack"] >= 0.0
    sig = [row["sigma"] for row in rep["thresholds"]]
    assert sig[0] < sig[1] < sig[2] == math.inf
    for row in rep["thresholds"]:
        assert row["gap"] == row["sigma"] - rep["energy"] or math.isinf(row["gap"])
    assert all(row["gap"] > 0 for row in rep["thresholds"])


# ------------------------------------------------------------ localization

def test_ims_defect_shrinks_on_ground_state(well_grid):
    basis = enumerate_basis(well_grid.m, 3)
    states = []
    for shape, h in (((9,), 0.3), ((17,), 0.15), ((33,), 0.075)):
        mat = build_matter_grid(shape, h, V=("well", -2.0, 0.65))
        H = assemble_gross(mat, basis, well_grid, 0.2, K=0.7)
        out = ims_residual(H, 0.4, 0.9)
        assert out["op_norm"] < 25.0
        assert out["correction_norm"] > 0.0
        states.append(out["state_residual"])
    assert states[1] < 0.75 * states[0]
    assert states[2] < 0.5 * states[1]


def test_decay_fit_harmonic_superexponential(well_grid):
    basis = enumerate_basis(well_grid.m, 1)
    a = 1.2
    mat = build_matter_grid((21,), 0.3, V=lambda x: 0.5 * a * a * np.sum(x * x, axis=-1))
    H = assemble_gross(mat, basis, well_grid, 0.0, K=0.7)
    gs = ground_state(H)
    # decoupled marginal is the bare matter ground state
    S = dirichlet_laplacian(mat).toarray() + np.diag(mat.active_V)
    _, v = la.eigh(S)
    marg = number_weighted_marginal(gs, H, 0.0)
    assert np.allclose(marg, np.abs(v[:, 0]), atol=1e-10)
    fit = decay_fit(gs, H, weight=("superexponential", 1))
    assert not fit["flagged"]
    assert fit["rate"] == pytest.approx(a, abs=0.1)


def test_decay_fit_well_matches_agmon_rate(well_grid):
    basis = enumerate_basis(well_grid.m, 1)
    mat = build_matter_grid((21,), 0.3, V=("well", -2.0, 0.65))
    H = assemble_gross(mat, basis, well_grid, 0.0, K=0.7)
    gs = ground_state(H)
    sigma = binding_report(H)["energy_free"]
    fit = decay_fit(gs, H, sigma=sigma)
    assert not fit["flagged"]
    agmon = math.sqrt(2.0 * (sigma - gs.energy))
    assert abs(fit["rate"] - agmon) / agmon < 0.08
    assert fit["ratio"] >= 1.0  # theory rate carries the (1 - eps) slack


def test_decay_fit_flags_flat_profile(well_grid):
    basis = enumerate_basis(well_grid.m, 1)
    mat = build_matter_grid((5,), 0.3, V="zero")
    H = assemble_gross(mat, basis, well_grid, 0.0, K=0.7)
    fit = decay_fit(ground_state(H), H)
    assert fit["flagged"]


# -------------------------------------------------------- Gaussian bounds

@pytest.fixture(scope="module")
def gauss_fixture():
    grid = build_mode_grid(2, (0.4, 2.2), "single-ray", mu=1.0)
    basis = enumerate_basis(grid.m, 8)
    vac = np.zeros(basis.dim, dtype=complex)
    vac[int(np.flatnonzero(basis.total == 0)[0])] = 1.0
    return grid, basis, vac


def _unit_norm_kernel(grid, target):
    h = np.ones(grid.m, dtype=complex)
    return h * (target / grid.norm(h))


def test_gaussian_upper_prefactor_exact(gauss_fixture):
    grid, basis, vac = gauss_fixture
    # weighted norm 1/4 puts the gate at exactly 1/2: prefactor sqrt(2)
    h = _unit_norm_kernel(grid, 0.25)
    r = gaussian_domination(vac, basis, grid, h, alpha=2.0)
    assert r.id == "INV_GAUSS"
    assert r.instance["prefactor"] == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert r.passed
    assert r.residual >= 0.0
    rng = np.random.default_rng(2)
    rows = rng.standard_normal((3, basis.dim)) + 1j * rng.standard_normal((3, basis.dim))
    r2 = gaussian_domination(rows, basis, grid, h, alpha=2.0)
    assert r2.passed


def test_gaussian_upper_gate_skip(gauss_fixture):
    grid, basis, vac = gauss_fixture
    h = _unit_norm_kernel(grid, 0.5)  # gate 4 * 2 * 1/4 = 2
    r = gaussian_domination(vac, basis, grid, h, alpha=2.0)
    assert r.passed
    assert math.isnan(r.residual)
    assert "skipped" in r.instance


def test_gaussian_lower_factor_and_vacuum_saturation(gauss_fixture):
    grid, basis, vac = gauss_fixture
    h = _unit_norm_kernel(grid, math.sqrt(3.0) / 4.0)
    r = gaussian_domination(vac, basis, grid, h, mode="lower")
    assert r.id == "GAUSS_LOWER"
    assert r.instance["factor"] == pytest.approx(2.0, abs=1e-12)
    # the vacuum saturates the bound exactly in the untruncated space, so
    # the truncated moment sits strictly below and closes in with the cap
    deficit8 = (r.lhs - r.rhs) / r.lhs
    assert 0.0 < deficit8 < 0.01
    b10 = enumerate_basis(grid.m, 10)
    v10 = np.zeros(b10.dim, dtype=complex)
    v10[int(np.flatnonzero(b10.total == 0)[0])] = 1.0
    r10 = gaussian_domination(v10, b10, grid, h, mode="lower")
    assert (r10.lhs - r10.rhs) / r10.lhs < 0.5 * deficit8


def test_gaussian_lower_holds_with_headroom(gauss_fixture):
    grid, basis, _ = gauss_fixture
    h = _unit_norm_kernel(grid, math.sqrt(3.0) / 4.0)
    rng = np.random.default_rng(9)
    rows = rng.standard_normal((4, basis.dim)) + 1j * rng.standard_normal((4, basis.dim))
    rows[:, basis.total > 4] = 0.0
    r = gaussian_domination(rows, basis, grid, h, mode="lower")
    assert r.passed
    assert r.residual > 0.0


def test_gaussian_lower_guards(gauss_fixture):
    grid, basis, vac = gauss_fixture
    with pytest.raises(ValueError):
        gaussian_domination(vac, basis, grid, _unit_norm_kernel(grid, 0.6),
                            mode="lower")
    bad = np.zeros(grid.m, dtype=complex)
    bad[0] = 1.0  # not conjugate-even on an antipodal grid
    with pytest.raises(ValueError):
        gaussian_domination(vac, basis, grid, bad, mode="lower")


def test_gaussian_sweep_separates_strong_kernel(gauss_fixture):
    grid, basis, vac = gauss_fixture
    caps = (4, 6, 8, 10, 12)
    strong = gaussian_domination(vac, basis, grid, _unit_norm_kernel(grid, 0.7),
                                 mode="sweep", caps=caps)
    assert strong["monotone"]
    assert strong["growth"] > 10.0
    weak = gaussian_domination(vac, basis, grid, _unit_norm_kernel(grid, 0.35),
                               mode="sweep", caps=caps)
    assert weak["growth"] < 1.1


# ------------------------------------------------------------ number decay

def test_number_decay_well(well_grid):
    basis = enumerate_basis(well_grid.m, 3)
    mat = build_matter_grid((21,), 0.3, V=("well", -2.0, 0.65))
    H = assemble_nelson(mat, basis, well_grid, 0.3, lam=2.2)
    gs = ground_state(H)
    sigma = binding_report(H)["energy_free"]
    r = number_decay(gs, H, sigma)
    assert r.passed
    assert r.instance["d_ir"] > 0.0
    assert r.instance["ratio_ok"]
    assert r.lhs <= r.rhs


def test_number_decay_rejects_divergent_infrared():
    grid = build_mode_grid(6, (0.05, 2.2), "single-ray", mu=0.0)
    basis = enumerate_basis(grid.m, 1)
    mat = build_matter_grid((3,), 0.4)
    H = assemble_gross(mat, basis, grid, 0.1, K=0.5)
    gs = ground_state(H)
    with pytest.raises(ValueError):
        number_decay(gs, H, sigma=1.0)


def test_number_marginal_reduces_to_plain_norm(small):
    _, basis, mat, H = small
    gs = ground_state(H)
    marg = number_weighted_marginal(gs, H, 0.0)
    rows = gs.vector.reshape(mat.n_active, basis.dim)
    assert np.allclose(marg, np.linalg.norm(rows, axis=1), atol=1e-14)


# ------------------------------------------------------ hypercontractivity

def test_hypercontractivity_decoupled_constant_is_exact():
    # single matter site: the sharp constant is the p-norm measure factor
    # h^(1/p - 1/2) times the semigroup weight exp(-t E)
    grid = build_mode_grid(1, (0.4, 2.2), "single-ray", mu=3.0)
    basis = enumerate_basis(grid.m, 12)
    mat = build_matter_grid((1,), 0.4)
    H = assemble_nelson(mat, basis, grid, 0.0, lam=6.0)
    r = hypercontractivity_check(H, t=1.0, n_samples=60, seed=11)
    assert r.passed
    p = r.instance["p"]
    assert p == pytest.approx(math.exp(1.0) + 1.0, abs=1e-12)
    pred = 0.4 ** (1.0 / p - 0.5) * math.exp(-1.0 / 0.4**2)
    assert abs(r.instance["c"] - pred) / pred < 1e-12


def test_hypercontractivity_coupled_stable():
    grid = build_mode_grid(2, (0.4, 2.2), "single-ray", mu=3.0)
    basis = enumerate_basis(grid.m, 5)
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_nelson(mat, basis, grid, 0.3, lam=2.2)
    r = hypercontractivity_check(H, t=1.0, n_samples=120, seed=7)
    assert r.passed
    assert not r.instance["quadrature_flag"]


def test_hypercontractivity_needs_mass(well_grid):
    grid = build_mode_grid(2, (0.4, 2.2), "single-ray", mu=0.0)
    basis = enumerate_basis(grid.m, 2)
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_gross(mat, basis, grid, 0.1, K=0.5)
    with pytest.raises(ValueError):
        hypercontractivity_check(H)


# ---------------------------------------------------------------- positivity

def test_positivity_connected_improving(well_grid):
    basis = enumerate_basis(well_grid.m, 6)
    mat = build_matter_grid((3,), 0.35, V="zero")
    H = assemble_nelson(mat, basis, well_grid, 0.1, lam=2.2)
    r = positivity_check(H, t=1.0)
    assert r.passed
    assert r.instance["connected"]
    assert r.instance["gap"] > 1e-8
    assert r.instance["ground_ratio"] > 0.0
    assert r.instance["imag_max"] < 1e-10


def test_positivity_disconnected_preserves_cone(well_grid):
    mask = np.array([True, True, False, True, True])
    mat = build_matter_grid((5,), 0.35, V=lambda x: 0.5 * np.sum(x * x, axis=-1),
                            mask=mask)
    basis = enumerate_basis(well_grid.m, 6)
    H = assemble_nelson(mat, basis, well_grid, 0.1, lam=6.0)
    r = positivity_check(H, t=1.0)
    assert r.passed
    assert not r.instance["connected"]
    assert r.instance["min_sample_ratio"] >= -1e-12


def test_field_semigroup_damps_coherent_kernels():
    # diagonal damping is exact on the truncation: e^{-t dGamma(omega)}
    # maps a coherent vector to the coherent vector of the damped kernel
    grid = build_mode_grid(1, (0.4, 2.2), "single-ray", mu=1.0)
    basis = enumerate_basis(grid.m, 10)
    f = np.full(grid.m, 0.6, dtype=complex)
    t = 0.7
    lhs = np.exp(-t * (basis.occ.astype(float) @ grid.omega)) * exp_vector(f, basis, grid)
    rhs = exp_vector(f * np.exp(-t * grid.omega), basis, grid)
    assert np.linalg.norm(lhs - rhs) < 1e-12 * np.linalg.norm(rhs)


# ------------------------------------------------------------ infrared scan

def test_ir_scan_number_tracks_divergence():
    mat = build_matter_grid((3,), 0.4, V="zero")
    out = ir_scan(mat, cap=3, e=0.12, lam=2.0,
                  sigma_list=(0.7, 0.35, 0.175, 1e-5),
                  radial_nodes=8, radial_range=(0.05, 2.0))
    rows = out["rows"]
    assert [r["sigma"] for r in rows] == sorted((0.7, 0.35, 0.175, 1e-5),
                                                reverse=True)
    nb = [r["n_boson"] for r in rows]
    ds = [r["dsum"] for r in rows]
    assert all(b > a for a, b in zip(nb, nb[1:]))
    assert all(b > a for a, b in zip(ds, ds[1:]))
    assert [r["resolved"] for r in rows] == [True, True, True, False]
    active = [r["n_active_modes"] for r in rows]
    assert all(b >= a for a, b in zip(active, active[1:]))
    for a, b in zip(rows, rows[1:]):
        if a["resolved"] and b["resolved"]:
            ratio = (b["n_boson"] - a["n_boson"]) / (b["dsum"] - a["dsum"])
            assert 1.0 / 3.0 <= ratio <= 3.0
    assert out["log_increment"] == pytest.approx(
        4.0 * math.pi * 0.12**2 * math.log(2.0), rel=1e-12)


# -------------------------------------------------------------- continuity

def test_continuity_constant_path_is_stationary(well_grid):
    basis = enumerate_basis(well_grid.m, 5)
    mat = build_matter_grid((3,), 0.35, V="zero")
    out = coupling_continuity(mat, basis, well_grid, [0.3, 0.3, 0.3])
    rows = out["rows"]
    assert math.isnan(rows[0]["overlap"])
    for r in rows[1:]:
        assert r["overlap"] == pytest.approx(1.0, abs=1e-12)
        assert r["energy"] == rows[0]["energy"]


def test_continuity_parity_in_coupling(well_grid):
    basis = enumerate_basis(well_grid.m, 5)
    mat = build_matter_grid((3,), 0.35, V="zero")
    out = coupling_continuity(mat, basis, well_grid, [0.4, -0.4])
    rows = out["rows"]
    assert abs(rows[0]["energy"] - rows[1]["energy"]) < 1e-10


def test_continuity_energy_decreases_with_coupling(well_grid):
    basis = enumerate_basis(well_grid.m, 5)
    mat = build_matter_grid((3,), 0.35, V="zero")
    out = coupling_continuity(mat, basis, well_grid, [0.0, 0.15, 0.3, 0.45])
    en = [r["energy"] for r in out["rows"]]
    ov = [r["overlap"] for r in out["rows"]]
    assert all(b < a for a, b in zip(en, en[1:]))
    assert all(o > 0.98 for o in ov[1:])


# ---------------------------------------------------------------- registry

def test_registry_all_checks_pass():
    results = verify_all()
    assert len(results) == len(REGISTRY)
    for r in results:
        assert r.passed, f"{r.id}: residual {r.residual} tol {r.tol}"


def test_registry_weyl_shift_exact_at_zero_displacement():
    r = verify_identity("WEYL_SHIFT", {"g_zero": True})
    assert r.passed
    assert r.residual <= 1e-12


def test_registry_rejects_unknown_id():
    with pytest.raises(ValueError):
        verify_identity("NO_SUCH_CHECK")
