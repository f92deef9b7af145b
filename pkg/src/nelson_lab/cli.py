"""Batch driver: flat key=value configs, named studies, CSV/JSON reports.

Config files are plain text, one ``section.key = value`` pair per line,
``#`` comments allowed.  Sections and keys:

  model.box            sites per axis, e.g. "5" or "5,5"     (required*)
  model.spacing        lattice constant h > 0                (required*)
  model.potential      "zero" or "name,arg1,arg2" spec       (default zero)
  model.mask           "all" or "ball,R"                     (default all)
  model.mu             boson mass >= 0                       (default 1.0)
  model.e              coupling constant                     (default 0.0)
  model.eta            "one" or "ir_sharp,sigma"             (default one)
  model.K              dressing scale for gross runs         (default 0.0)
  model.lambda         ultraviolet cutoff, "inf" allowed     (default inf)
  model.representation "nelson" | "gross"                    (default nelson)
  disc.radial_nodes    radial quadrature nodes               (required*)
  disc.k_range         "kmin,kmax"                           (required*)
  disc.angular         direction scheme                      (default single-ray)
  disc.cap             total boson cap N                     (required*)
  study.name           one of the STUDIES table              (required)
  study.*              study-specific knobs (see each study)
  mc.dt / mc.t / mc.paths / mc.seed / mc.x / mc.batches      (fk studies)
  output.dir           artifact directory                    (default ".")

(* not required by studies that build their own model, e.g. identity-suite.)

Exit codes: 0 all asserted checks pass, 1 a check failed, 2 config error,
3 numerical failure (non-convergence, degenerate ensembles).  Every run
writes one CSV per table (17-significant-digit floats, LF, UTF-8) and a
summary.json {config_hash, git_rev, checks}; CSV bodies are byte-identical
across reruns of the same config, timestamps live only in the JSON.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .fkmc import (
    PathConfig,
    field_generating,
    fk_energy,
    martingale_check,
    number_generating,
    oracle_gate,
)
from .fock import enumerate_basis
from .hamiltonian import assemble_gross, assemble_nelson
from .matter import build_matter_grid
from .modes import build_mode_grid
from .spectra import (
    binding_report,
    coupling_continuity,
    decay_fit,
    gaussian_domination,
    ground_state,
    hypercontractivity_check,
    ir_scan,
    low_spectrum,
    number_decay,
    positivity_check,
    renorm_sweep,
    verify_all,
)

# soft and hard guards on matter x Fock dimension; the soft one only warns
_DIM_WARN = 200_000
_DIM_REJECT = 2_000_000


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


class NumericalFailure(Exception):
    """A solver or estimator did not reach a usable result."""


# -------------------------------------------------------------- run config

class RunConfig:
    """Flat dotted-key configuration with typed accessors."""

    def __init__(self, pairs: dict, path: str = "<memory>"):
        self.pairs = dict(pairs)
        self.path = path
        self.used = set()

    @classmethod
    def parse(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as ex:
            raise ConfigError(f"cannot read {path}: {ex}") from None
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, "
                                  f"got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if not key or "." not in key:
                raise ConfigError(f"line {lineno}: keys are section.name, "
                                  f"got {key!r}")
            if key in pairs:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            pairs[key] = val
        return cls(pairs, str(path))

    def canonical(self) -> str:
        return "\n".join(f"{k}={self.pairs[k]}" for k in sorted(self.pairs))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # typed getters; _MISSING sentinel keeps None usable as a default
    def get(self, key, default=None, required=False):
        self.used.add(key)
        if key in self.pairs:
            return self.pairs[key]
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def getfloat(self, key, default=None, required=False):
        val = self.get(key, None, required)
        if val is None:
            return default
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {val!r}") from None

    def getint(self, key, default=None, required=False):
        val = self.get(key, None, required)
        if val is None:
            return default
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {val!r}") from None

    def getfloats(self, key, default=None, required=False):
        val = self.get(key, None, required)
        if val is None:
            return default
        try:
            return [float(s) for s in val.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"{key}: not a number list: {val!r}") from None

    def getints(self, key, default=None, required=False):
        val = self.get(key, None, required)
        if val is None:
            return default
        try:
            return [int(s) for s in val.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"{key}: not an integer list: {val!r}") from None


def _parse_potential(spec: str):
    parts = [s.strip() for s in spec.split(",")]
    if len(parts) == 1:
        return parts[0]
    try:
        return (parts[0], *(float(s) for s in parts[1:]))
    except ValueError:
        raise ConfigError(f"model.potential: bad arguments in {spec!r}") from None


def _parse_eta(spec: str):
    parts = [s.strip() for s in spec.split(",")]
    if len(parts) == 1:
        return parts[0]
    try:
        return (parts[0], *(float(s) for s in parts[1:]))
    except ValueError:
        raise ConfigError(f"model.eta: bad arguments in {spec!r}") from None


def _mask_array(spec: str, shape, spacing: float):
    if spec == "all":
        return None
    parts = [s.strip() for s in spec.split(",")]
    if parts[0] != "ball" or len(parts) != 2:
        raise ConfigError(f"model.mask: expected 'all' or 'ball,R', got {spec!r}")
    radius = float(parts[1])
    axes = [(np.arange(n) - 0.5 * (n - 1)) * spacing for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return (sum(m ** 2 for m in mesh) <= radius ** 2).reshape(-1)


class Model:
    """Lazy model builder shared by the studies."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._parts = {}

    def _build_parts(self):
        cfg = self.cfg
        shape = tuple(cfg.getints("model.box", required=True))
        spacing = cfg.getfloat("model.spacing", required=True)
        pot = _parse_potential(cfg.get("model.potential", "zero"))
        mask = _mask_array(cfg.get("model.mask", "all"), shape, spacing)
        matter = build_matter_grid(shape, spacing, V=pot, mask=mask)
        nodes = cfg.getint("disc.radial_nodes", required=True)
        k_range = cfg.getfloats("disc.k_range", required=True)
        if len(k_range) != 2:
            raise ConfigError("disc.k_range: expected 'kmin,kmax'")
        grid = build_mode_grid(
            nodes, (k_range[0], k_range[1]),
            cfg.get("disc.angular", "single-ray"),
            mu=cfg.getfloat("model.mu", 1.0),
            eta_spec=_parse_eta(cfg.get("model.eta", "one")),
            avoid_radii=cfg.getfloats("disc.avoid_radii", []))
        cap = cfg.getint("disc.cap", required=True)
        fock = enumerate_basis(grid.m, cap)
        if matter.n_active * fock.dim > _DIM_REJECT:
            raise ConfigError(
                f"dimension {matter.n_active * fock.dim} exceeds the "
                f"overflow guard {_DIM_REJECT}")
        return {"matter": matter, "grid": grid, "fock": fock}

    def __getattr__(self, name):
        if name in ("matter", "grid", "fock"):
            if not self._parts:
                self._parts = self._build_parts()
            return self._parts[name]
        raise AttributeError(name)

    def hamiltonian(self):
        cfg = self.cfg
        lam = cfg.getfloat("model.lambda", math.inf)
        e = cfg.getfloat("model.e", 0.0)
        rep = cfg.get("model.representation", "nelson")
        if rep == "gross":
            return assemble_gross(self.matter, self.fock, self.grid, e,
                                  cfg.getfloat("model.K", 0.0), lam)
        if rep != "nelson":
            raise ConfigError(f"model.representation: unknown {rep!r}")
        return assemble_nelson(self.matter, self.fock, self.grid, e, lam)

    def path_config(self) -> PathConfig:
        cfg = self.cfg
        try:
            return PathConfig(
                dt=cfg.getfloat("mc.dt", 0.5),
                horizon=cfg.getfloat("mc.t", required=True),
                n_paths=cfg.getint("mc.paths", required=True),
                seed=cfg.getint("mc.seed", 0),
                x=cfg.getint("mc.x", 0),
                d=self.matter.dim,
                n_batches=cfg.getint("mc.batches", 16))
        except ValueError as ex:
            raise ConfigError(f"mc block: {ex}") from None

    def solved_ground(self):
        gs = ground_state(self.hamiltonian())
        if not gs.stats.get("converged", True):
            raise NumericalFailure(
                f"ground solver stalled at residual {gs.residual:.3e}")
        return gs


def _check(cid: str, passed, residual, tol) -> dict:
    return {"id": cid, "pass": bool(passed), "residual": float(residual),
            "tolerance": float(tol)}


def _from_result(res) -> dict:
    return _check(res.id, res.passed, res.residual, res.tol)


# ------------------------------------------------------------------ studies

def study_ground(model: Model):
    cfg = model.cfg
    gs = model.solved_ground()
    rows = [{"energy": gs.energy, "residual": gs.residual,
             "method": gs.stats.get("method", ""),
             "iterations": gs.stats.get("iterations", 0)}]
    levels = cfg.getint("study.levels", 0)
    tabs = {"ground": rows}
    if levels >= 2:
        vals, _, _ = low_spectrum(model.hamiltonian(), k=levels)
        tabs["levels"] = [{"index": i, "energy": float(v)}
                          for i, v in enumerate(vals)]
    checks = [_check("ground-converged", True, gs.residual, 1e-8)]
    if cfg.getfloat("model.e", 0.0) == 0.0:
        # decoupled operator: E is the lowest matter eigenvalue exactly
        from scipy.sparse import diags
        from .matter import dirichlet_laplacian
        T = (dirichlet_laplacian(model.matter)
             + diags(model.matter.active_V)).toarray()
        e_matter = float(np.linalg.eigvalsh(T)[0])
        diff = abs(gs.energy - e_matter)
        checks.append(_check("ground-free-matter", diff <= 1e-8, diff, 1e-8))
    return tabs, checks


def study_renorm_sweep(model: Model):
    cfg = model.cfg
    lams = cfg.getfloats("study.lambdas", required=True)
    out = renorm_sweep(model.matter, model.fock, model.grid,
                       cfg.getfloat("model.e", 0.0), lams,
                       K=cfg.getfloat("model.K", 0.0))
    rows = out["rows"]
    # single-constant resolvent bound, fitted on even rows, held on odd
    fit = [(r["resolvent_gap"], r["b_norm"]) for r in rows if r["b_norm"] > 0]
    checks = []
    if len(fit) >= 2:
        cal = [g / b for g, b in fit[0::2]]
        val = [g / b for g, b in fit[1::2]]
        C = max(cal)
        slack = cfg.getfloat("study.c_slack", 1.5)
        worst = max(val) / C if val and C > 0 else 0.0
        checks.append(_check("renorm-bound-split", worst <= slack, worst,
                             slack))
    return {"sweep": rows}, checks


def study_binding(model: Model):
    cfg = model.cfg
    H = model.hamiltonian()
    rep = binding_report(H, R_list=cfg.getfloats("study.radii", []))
    rows = [{"R": r["R"], "sigma": r["sigma"], "gap": r["gap"]}
            for r in rep["thresholds"]]
    summary = [{"energy": rep["energy"], "energy_free": rep["energy_free"],
                "matter_energy": rep["matter_energy"], "slack": rep["slack"]}]
    tol = 1e-9 * max(1.0, abs(rep["energy"]))
    checks = [_check("binding-slack", rep["slack"] >= -tol, rep["slack"], tol)]
    return {"summary": summary, "thresholds": rows}, checks


def study_decay_fit(model: Model):
    cfg = model.cfg
    gs = model.solved_ground()
    H = model.hamiltonian()
    sigma = cfg.getfloat("study.sigma", None)
    if sigma is None:
        sigma = binding_report(H)["energy_free"]
    fit = decay_fit(gs, H, sigma=sigma,
                    r=cfg.getfloat("study.r", 0.0),
                    epsilon=cfg.getfloat("study.epsilon", 0.2))
    keys = ["rate", "intercept", "n_sites", "dynamic_range", "flagged"]
    keys += [k for k in ("theory_rate", "ratio") if k in fit]
    rows = [{k: fit[k] for k in keys}]
    ok = math.isfinite(fit["rate"]) and fit["rate"] > 0 and not fit["flagged"]
    checks = [_check("decay-rate-positive", ok,
                     fit["rate"] if math.isfinite(fit["rate"]) else -1.0, 0.0)]
    ratio = fit.get("ratio")
    if isinstance(ratio, float) and math.isfinite(ratio):
        lo, hi = cfg.getfloats("study.band", [0.5, 2.0])
        checks.append(_check("decay-agmon-band", lo <= ratio <= hi, ratio, hi))
    return {"fit": rows}, checks


def study_gaussian_scan(model: Model):
    cfg = model.cfg
    gs = model.solved_ground()
    grid, fock = model.grid, model.fock
    direction = np.ones(grid.m)
    direction /= grid.norm(direction)
    rows, checks = [], []
    for hn in cfg.getfloats("study.h_norms", [0.1, 0.3]):
        res = gaussian_domination(gs.vector, fock, grid, hn * direction,
                                  mode="lower")
        rows.append({"mode": "lower", "h_norm": hn, "lhs": res.lhs,
                     "rhs": res.rhs, "slack": res.residual,
                     "passed": res.passed})
        checks.append(_check(f"gauss-lower-{hn:g}", res.passed,
                             res.residual, res.tol))
    alpha = cfg.getfloat("study.alpha", 2.0)
    hu = cfg.getfloat("study.h_upper", 0.3)
    res = gaussian_domination(gs.vector, fock, grid, hu * direction,
                              alpha=alpha, mode="upper")
    rows.append({"mode": "upper", "h_norm": hu, "lhs": res.lhs,
                 "rhs": res.rhs, "slack": res.residual, "passed": res.passed})
    checks.append(_check("gauss-upper", res.passed, res.residual, res.tol))
    return {"scan": rows}, checks


def study_number_decay(model: Model):
    cfg = model.cfg
    gs = model.solved_ground()
    H = model.hamiltonian()
    sigma = cfg.getfloat("study.sigma", None)
    if sigma is None:
        sigma = binding_report(H)["energy_free"]
    res = number_decay(gs, H, sigma,
                       r_list=cfg.getfloats("study.r_list", [0.0, 0.1, 0.2]))
    rows = [{"sigma": sigma, "lhs": res.lhs, "rhs": res.rhs,
             "residual": res.residual, "passed": res.passed}]
    return {"number_decay": rows}, [_from_result(res)]


def study_hypercontractivity(model: Model):
    cfg = model.cfg
    res = hypercontractivity_check(
        model.hamiltonian(), t=cfg.getfloat("study.t", 1.0),
        n_samples=cfg.getint("study.samples", 200),
        seed=cfg.getint("study.seed", 11))
    inst = res.instance
    rows = [{"p": inst.get("p"), "constant": inst.get("c"),
             "constant_half": inst.get("c_half"),
             "stability": res.residual, "passed": res.passed}]
    return {"hyper": rows}, [_from_result(res)]


def study_positivity(model: Model):
    res = positivity_check(model.hamiltonian(),
                           t=model.cfg.getfloat("study.t", 1.0))
    inst = res.instance
    rows = [{"gap": inst.get("gap"),
             "min_sample_ratio": inst.get("min_sample_ratio"),
             "ground_ratio": inst.get("ground_ratio"),
             "connected": inst.get("connected"), "passed": res.passed}]
    return {"positivity": rows}, [_from_result(res)]


def study_ir_scan(model: Model):
    cfg = model.cfg
    k_range = cfg.getfloats("disc.k_range", required=True)
    out = ir_scan(model.matter, cfg.getint("disc.cap", required=True),
                  cfg.getfloat("model.e", 0.0),
                  cfg.getfloat("model.lambda", math.inf),
                  cfg.getfloats("study.sigmas", required=True),
                  radial_nodes=cfg.getint("disc.radial_nodes", required=True),
                  radial_range=(k_range[0], k_range[1]),
                  angular_scheme=cfg.get("disc.angular", "antipodal-pairs"))
    rows = out["rows"]
    live = [r for r in rows if r["resolved"]]
    mono = all(a["n_boson"] <= b["n_boson"] + 1e-12
               for a, b in zip(live, live[1:]))
    band = cfg.getfloat("study.band", 3.0)
    ratios = [r["ratio"] for r in live if math.isfinite(r["ratio"])]
    in_band = bool(ratios) and max(ratios) / min(ratios) <= band ** 2 \
        and all(1.0 / band <= x <= band for x in ratios)
    checks = [_check("ir-monotone", mono, 0.0 if mono else 1.0, 0.0),
              _check("ir-ratio-band", in_band,
                     max(ratios) / min(ratios) if ratios else math.inf,
                     band ** 2)]
    return {"scan": rows}, checks


def study_continuity(model: Model):
    cfg = model.cfg
    out = coupling_continuity(
        model.matter, model.fock, model.grid,
        cfg.getfloats("study.e_list", required=True),
        K=cfg.getfloat("model.K", 0.0),
        lam=cfg.getfloat("model.lambda", math.inf),
        representation=cfg.get("model.representation", "gross"))
    rows = out["rows"]
    ovs = [r["overlap"] for r in rows[1:]]
    floor = cfg.getfloat("study.min_overlap", 0.9)
    worst = min(ovs) if ovs else 1.0
    return ({"continuity": rows},
            [_check("continuity-overlap", worst >= floor, worst, floor)])


def study_identity_suite(model: Model):
    ids = model.cfg.get("study.ids", None)
    results = verify_all(ids.split(",") if ids else None)
    rows = [{"id": r.id, "lhs": r.lhs, "rhs": r.rhs, "residual": r.residual,
             "tolerance": r.tol, "passed": r.passed} for r in results]
    return {"registry": rows}, [_from_result(r) for r in results]


def _gate_first(model: Model):
    """Every path-estimator study opens with the amplitude oracle; no
    estimate is reported when the gate fails on the same model family."""
    H = model.hamiltonian()
    pc = model.path_config()
    gate = oracle_gate(H, pc)
    row = {"t": gate["t"], "x": gate["x"], "mean": gate["estimate"].mean,
           "stderr": gate["estimate"].stderr, "exact": gate["exact"],
           "sigma_distance": gate["sigma_distance"], "ess": gate["estimate"].ess}
    check = _check("fk-oracle-gate", gate["passed"], gate["sigma_distance"],
                   3.0)
    return H, pc, gate, row, check


def study_fk_oracle(model: Model):
    cfg = model.cfg
    _, _, gate, row, check = _gate_first(model)
    checks = [check]
    rel = cfg.getfloat("study.max_rel_stderr", 0.02)
    ratio = (gate["estimate"].stderr / abs(gate["estimate"].mean)
             if gate["estimate"].mean else math.inf)
    checks.append(_check("fk-oracle-precision", ratio <= rel, ratio, rel))
    return {"gate": [row]}, checks


def study_fk_energy(model: Model):
    cfg = model.cfg
    H, pc, gate, grow, gcheck = _gate_first(model)
    if not gate["passed"]:
        return {"gate": [grow]}, [gcheck]
    t1 = cfg.getfloat("study.t1", pc.horizon)
    t0 = cfg.getfloat("study.t0", t1 / 2.0)
    if not 0.0 < t0 < t1 <= pc.horizon:
        raise ConfigError("study.t0/t1: need 0 < t0 < t1 <= mc.t")
    est = fk_energy(H, pc, t0=t0, t1=t1)
    gs = model.solved_ground()
    dist = abs(est.mean - gs.energy) / est.stderr if est.stderr > 0 else 0.0
    rows = [{"t0": t0, "t1": t1, "energy_mc": est.mean, "stderr": est.stderr,
             "energy_ref": gs.energy, "sigma_distance": dist,
             "ess": est.ess}]
    checks = [gcheck, _check("fk-energy-3sigma", dist <= 3.0, dist, 3.0)]
    return {"gate": [grow], "energy": rows}, checks


def study_fk_martingale(model: Model):
    cfg = model.cfg
    H, pc, gate, grow, gcheck = _gate_first(model)
    if not gate["passed"]:
        return {"gate": [grow]}, [gcheck]
    gs = model.solved_ground()
    vac = int(np.flatnonzero(H.fock.total == 0)[0])
    g = gs.vector.reshape(H.matter.n_active, H.fock.dim)[:, vac].real
    times = cfg.getfloats("study.times", [0.5, 1.0, 2.0])
    out = martingale_check(H, pc, times, g=g, energy=gs.energy)
    rows = [{"t": r["t"], "mean": r["mean"], "stderr": r["stderr"],
             "ess": r["ess"]} for r in out["rows"]]
    checks = [gcheck, _check("fk-martingale-constancy", out["passed"],
                             out["max_sigma_distance"], 3.0)]
    return {"gate": [grow], "martingale": rows}, checks


def study_fk_generating(model: Model):
    cfg = model.cfg
    H, pc, gate, grow, gcheck = _gate_first(model)
    if not gate["passed"]:
        return {"gate": [grow]}, [gcheck]
    gs = model.solved_ground()
    z_list = cfg.getfloats("study.z_list", [0.5, 1.0])
    L = cfg.getfloat("study.L", 1.0)
    hn = cfg.getfloat("study.h_norm", 0.4)
    h = np.ones(H.grid.m)
    h *= hn / H.grid.norm(h)
    checks = [gcheck]
    num_rows, field_rows = [], []
    # convergence in the horizon is part of the claim: report the sweep,
    # assert at the configured (largest) horizon
    sweep = cfg.getfloats("study.t_sweep", [pc.horizon / 2.0, pc.horizon])
    for t in sorted(sweep):
        try:
            pct = PathConfig(dt=pc.dt, horizon=t, n_paths=pc.n_paths,
                             seed=pc.seed, x=pc.x, d=pc.d,
                             n_batches=pc.n_batches)
        except ValueError as ex:
            raise ConfigError(f"study.t_sweep: {ex}") from None
        for z in z_list:
            out = number_generating(z, L, H, pct, gs.vector)
            num_rows.append({"t": t, "z": z, "L": L, "mean": out["mc"].mean,
                             "stderr": out["mc"].stderr,
                             "spectral": out["spectral"],
                             "sigma_distance": out["sigma_distance"]})
            if t == max(sweep):
                checks.append(_check(f"fk-number-z{z:g}", out["passed"],
                                     out["sigma_distance"], 3.0))
        for z in z_list:
            out = field_generating(h, z, H, pct, gs.vector)
            field_rows.append({"t": t, "z": z, "h_norm": hn,
                               "mean": out["mc"].mean,
                               "stderr": out["mc"].stderr,
                               "spectral": out["spectral"],
                               "sigma_distance": out["sigma_distance"],
                               "alpha_imag_max": out["alpha_imag_max"]})
            if t == max(sweep):
                checks.append(_check(f"fk-field-z{z:g}", out["passed"],
                                     out["sigma_distance"], 3.0))
    return ({"gate": [grow], "number_generating": num_rows,
             "field_generating": field_rows}, checks)


STUDIES = {
    "ground": study_ground,
    "renorm-sweep": study_renorm_sweep,
    "binding": study_binding,
    "decay-fit": study_decay_fit,
    "gaussian-scan": study_gaussian_scan,
    "number-decay": study_number_decay,
    "hypercontractivity": study_hypercontractivity,
    "positivity": study_positivity,
    "ir-scan": study_ir_scan,
    "continuity": study_continuity,
    "identity-suite": study_identity_suite,
    "fk-oracle": study_fk_oracle,
    "fk-energy": study_fk_energy,
    "fk-martingale": study_fk_martingale,
    "fk-generating": study_fk_generating,
}

# studies that never touch the model block
_MODELFREE = {"identity-suite"}


# ------------------------------------------------------------------ output

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, rows: list) -> None:
    header = list(rows[0].keys()) if rows else []
    lines = [",".join(header)]
    lines += [",".join(_fmt(row.get(col)) for col in header) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _git_rev() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _write_outputs(out_dir: Path, study: str, cfg: RunConfig, tables: dict,
                   checks: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in tables.items():
        _write_csv(out_dir / f"{study}_{name}.csv", rows)
    summary = {
        "config_hash": cfg.hash(),
        "git_rev": _git_rev(),
        "study": study,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "checks": [{k: _json_safe(v) for k, v in c.items()} for c in checks],
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- commands

def _estimate(cfg: RunConfig):
    """Schema-level sanity report: (problems, warnings, info lines)."""
    problems, warnings, info = [], [], []
    study = cfg.get("study.name", required=True)
    if study not in STUDIES:
        problems.append(f"unknown study {study!r}; known: "
                        + ", ".join(sorted(STUDIES)))
        return problems, warnings, info
    info.append(f"study: {study}")
    if study in _MODELFREE:
        return problems, warnings, info
    shape = tuple(cfg.getints("model.box", required=True))
    nodes = cfg.getint("disc.radial_nodes", required=True)
    cap = cfg.getint("disc.cap", required=True)
    k_range = cfg.getfloats("disc.k_range", required=True)
    if len(k_range) != 2 or not 0 <= k_range[0] < k_range[1]:
        problems.append(f"disc.k_range: need 0 <= kmin < kmax, got {k_range}")
        return problems, warnings, info
    mu = cfg.getfloat("model.mu", 1.0)
    if mu == 0.0 and k_range[0] == 0.0:
        problems.append(
            "model.mu = 0 with k_range starting at 0: the massless grid "
            "needs an infrared-regular k_min > 0 (or a sharp eta window)")
    n_dirs = {"single-ray": 2, "antipodal-pairs": 6}.get(
        cfg.get("disc.angular", "single-ray"), 16)
    m = nodes * n_dirs
    fdim = math.comb(cap + m, m)
    n_sites = int(np.prod(shape))
    dim = n_sites * fdim
    info.append(f"dimension: {dim} (matter {n_sites} x fock {fdim}, "
                f"m = {m} modes)")
    nnz = dim * (2 * len(shape) + m * m // 2 + 2)
    info.append(f"memory: ~{nnz * 16 / 1e6:.1f} MB operator estimate")
    if dim > _DIM_REJECT:
        problems.append(f"dimension {dim} exceeds the overflow guard "
                        f"{_DIM_REJECT}")
    elif dim > _DIM_WARN:
        warnings.append(f"dimension {dim} above the comfort guard "
                        f"{_DIM_WARN}; dense fallbacks are out of reach")
    return problems, warnings, info


def cmd_validate(path) -> int:
    try:
        cfg = RunConfig.parse(path)
        problems, warnings, info = _estimate(cfg)
    except ConfigError as ex:
        print(f"rejected: {ex}")
        return 2
    for line in info:
        print(line)
    for line in warnings:
        print(f"warning: {line}")
    if problems:
        for line in problems:
            print(f"rejected: {line}")
        return 2
    print("ok")
    return 0


def _thread_guard(n: int | None):
    if n is None:
        env = os.environ.get("NELSON_LAB_THREADS", "").strip()
        n = int(env) if env.isdigit() else None
    if n is None or n < 1:
        import contextlib
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def cmd_run(path, threads: int | None = None, out: str | None = None) -> int:
    try:
        cfg = RunConfig.parse(path)
        problems, warnings, _ = _estimate(cfg)
        if problems:
            for line in problems:
                print(f"config error: {line}", file=sys.stderr)
            return 2
        study = cfg.get("study.name")
        out_dir = Path(out or cfg.get("output.dir", "."))
        with _thread_guard(threads):
            tables, checks = STUDIES[study](Model(cfg))
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except (NumericalFailure, ValueError, FloatingPointError,
            np.linalg.LinAlgError) as ex:
        print(f"numerical failure: {ex}", file=sys.stderr)
        return 3
    for line in warnings:
        print(f"warning: {line}")
    _write_outputs(out_dir, study, cfg, tables, checks)
    for c in checks:
        verdict = "PASS" if c["pass"] else "FAIL"
        print(f"{verdict} {c['id']}: residual {_fmt(c['residual'])} "
              f"(tolerance {_fmt(c['tolerance'])})")
    print(f"wrote {len(tables)} table(s) to {out_dir}")
    return 0 if all(c["pass"] for c in checks) else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="nelson-lab",
        description="coupled particle-field lattice workbench")
    sub = ap.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute the study named in the config")
    runp.add_argument("config")
    runp.add_argument("--threads", type=int, default=None)
    runp.add_argument("--out", default=None)
    valp = sub.add_parser("validate", help="schema check without execution")
    valp.add_argument("config")
    args = ap.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, threads=args.threads, out=args.out)
    return cmd_validate(args.config)


if __name__ == "__main__":
    raise SystemExit(main())
