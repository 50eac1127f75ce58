"""Command line runner: INI scenario files in, CSV/JSON data out.

Usage::

    scarcat <command> <config.ini> [--out DIR] [--seed N]

Commands: scarcheck, evolve, omega, fcs, quantumness, spectrum, dualcheck,
u1check, catreport.  Exit codes: 0 success, 2 configuration error,
3 numerical non-convergence, 4 invariant failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sst

from . import analysis, observables, spectral, state_engine
from .pauli_model import (
    HamiltonianSpec,
    ModelError,
    PauliTerm,
    build_h0,
    build_h1,
    build_h2,
    build_h_tau,
    commutator_norm,
    is_hermitian,
    scar_action,
    semilocal_charge,
    total_sz,
)

log = logging.getLogger("scarcat")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INVARIANT = 0, 2, 3, 4
THREADS_ENV = "SCARCAT_THREADS"

MODELS = ("h1", "h2", "ising", "tilted_ising", "h_tau")
MODEL_PARAMS = {
    "h1": {"J", "gamma", "w", "Delta", "Dz", "hz"},
    "h2": {"J", "gamma_x", "gamma_y", "gamma_z", "D_x", "D_y", "D_z", "hz"},
    "ising": {"h0z"},
    "tilted_ising": {"h0z", "h0x"},
    "h_tau": {"J", "gamma", "w", "Dz", "hz", "Delta"},
}
LIST_PARAMS = {"J", "gamma_x", "gamma_y", "gamma_z", "D_x", "D_y", "D_z"}

SECTIONS = {
    "model": {"name", "L", "boundary"},  # plus model parameters
    "protocol": {"theta", "thetas", "site", "epsilon"},
    "evolution": {"evolver", "dt", "times", "t_max", "steps", "krylov_dim", "tol"},
    "pre_quench": {"model", "h0z", "h0x", "t0"},
    "spectrum": {"degree", "trim", "m", "reference"},
    "u1": {"s", "density", "flips", "draws"},
    "output": {"dir", "seed"},
}


class ConfigError(ValueError):
    """Invalid scenario file; the message starts with the offending key path."""


class InvariantError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# value parsing


_PI_RE = re.compile(r"^\s*([-+]?[0-9.]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


def parse_angle(text: str) -> float:
    """Radians as a number or a multiple of pi such as ``pi/4`` or ``0.5*pi``."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_RE.match(text)
    if not m:
        raise ValueError(f"cannot read angle {text!r}")
    coef = m.group(1)
    coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    denom = float(m.group(2)) if m.group(2) else 1.0
    return coef * math.pi / denom


def _floats(text: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def _fmt(x) -> str:
    if isinstance(x, (list, tuple)):
        return ", ".join(_fmt(v) for v in x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


def parse_density(text: str) -> HamiltonianSpec:
    """Local density written as ``coef*x0 x1 + z0`` (sites relative to the support)."""
    terms = []
    for chunk in text.split("+"):
        chunk = chunk.strip()
        if not chunk:
            continue
        coef = 1.0
        if "*" in chunk:
            c, chunk = chunk.split("*", 1)
            coef = float(c)
        factors = []
        for tok in chunk.split():
            m = re.fullmatch(r"([xyz])(\d+)", tok)
            if not m:
                raise ValueError(f"bad Pauli factor {tok!r}")
            factors.append((int(m.group(2)), m.group(1)))
        terms.append(PauliTerm(coef, tuple(factors)))
    if not terms:
        raise ValueError("empty density")
    width = max(s for t in terms for s in t.sites) + 1
    return HamiltonianSpec(width, "open", tuple(terms), text.strip())


# ---------------------------------------------------------------------------
# scenario config


@dataclass
class ScenarioConfig:
    model: str
    L: int
    boundary: str = "open"
    params: dict = field(default_factory=dict)
    theta: float = math.pi / 2
    thetas: list = field(default_factory=lambda: [math.pi / 2, math.pi / 4])
    site: int | str = "center"
    epsilon: float = 1e-3
    evolver: str = "krylov"
    dt: float = 0.01
    times: list = field(default_factory=list)
    t_max: float | None = None
    steps: int | None = None
    krylov_dim: int = 30
    tol: float = 1e-10
    pre_quench: dict | None = None
    spectrum: dict = field(default_factory=dict)
    u1: dict = field(default_factory=dict)
    outdir: str = "out"
    seed: int = 0

    # -- derived ----------------------------------------------------------

    @property
    def site_index(self) -> int:
        return self.L // 2 if self.site == "center" else int(self.site)

    def time_grid(self) -> list[float]:
        if self.times:
            return list(self.times)
        if self.t_max is None or not self.steps:
            return []
        return [self.t_max * (i + 1) / self.steps for i in range(self.steps)]

    def hamiltonian(self) -> HamiltonianSpec:
        return build_model(self.model, self.L, self.params, self.boundary)

    def pre_quench_spec(self):
        if not self.pre_quench:
            return None
        pq = self.pre_quench
        h0 = build_h0(pq["model"], self.L, pq.get("h0z", 0.0), pq.get("h0x", 0.0), self.boundary)
        return state_engine.PreQuench(h0, pq["t0"])

    def evolve_kwargs(self) -> dict:
        if self.evolver == "krylov":
            return {"method": "krylov", "m": self.krylov_dim, "tol": self.tol}
        return {"method": "trotter", "dt": self.dt}

    # -- io -----------------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["model"] = {"name": self.model, "L": str(self.L), "boundary": self.boundary}
        for k in sorted(self.params):
            cp["model"][k] = _fmt(self.params[k])
        cp["protocol"] = {
            "theta": repr(self.theta),
            "thetas": _fmt([float(t) for t in self.thetas]),
            "site": str(self.site),
            "epsilon": repr(self.epsilon),
        }
        ev = {"evolver": self.evolver, "dt": repr(self.dt), "krylov_dim": str(self.krylov_dim), "tol": repr(self.tol)}
        if self.times:
            ev["times"] = _fmt([float(t) for t in self.times])
        if self.t_max is not None:
            ev["t_max"] = repr(self.t_max)
        if self.steps is not None:
            ev["steps"] = str(self.steps)
        cp["evolution"] = ev
        if self.pre_quench:
            cp["pre_quench"] = {k: _fmt(v) for k, v in sorted(self.pre_quench.items())}
        if self.spectrum:
            cp["spectrum"] = {k: _fmt(v) for k, v in sorted(self.spectrum.items())}
        if self.u1:
            cp["u1"] = {k: _fmt(v) for k, v in sorted(self.u1.items())}
        cp["output"] = {"dir": self.outdir, "seed": str(self.seed)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def build_model(name: str, L: int, params: dict, boundary: str) -> HamiltonianSpec:
    if name == "h1":
        return build_h1(L, boundary=boundary, **params)
    if name == "h2":
        return build_h2(L, boundary=boundary, **params)
    if name in ("ising", "tilted_ising"):
        return build_h0(name, L, boundary=boundary, **params)
    if name == "h_tau":
        return build_h_tau(L, boundary=boundary, **params)
    raise ModelError(f"unknown model {name!r}")


def _get(section, key, conv, path):
    try:
        return conv(section[key])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"<file>: {exc}") from None
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{name}: unknown section")
    if "model" not in cp:
        raise ConfigError("model: missing section")
    sec = cp["model"]
    for key in ("name", "L"):
        if key not in sec:
            raise ConfigError(f"model.{key}: missing")
    model = sec["name"].strip()
    if model not in MODELS:
        raise ConfigError(f"model.name: unknown model {model!r}")
    allowed = SECTIONS["model"] | MODEL_PARAMS[model]
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"model.{key}: unknown key for model {model}")
    params = {}
    for key in sec:
        if key in MODEL_PARAMS[model]:
            if model == "h2" and key in LIST_PARAMS:
                params[key] = _get(sec, key, _floats, f"model.{key}")
            else:
                params[key] = _get(sec, key, float, f"model.{key}")
    cfg = ScenarioConfig(
        model=model,
        L=_get(sec, "L", int, "model.L"),
        boundary=sec.get("boundary", "open").strip(),
        params=params,
    )
    for name in cp.sections():
        for key in cp[name]:
            if name != "model" and key not in SECTIONS[name]:
                raise ConfigError(f"{name}.{key}: unknown key")
    if "protocol" in cp:
        p = cp["protocol"]
        if "theta" in p:
            cfg.theta = _get(p, "theta", parse_angle, "protocol.theta")
        if "thetas" in p:
            cfg.thetas = _get(p, "thetas", lambda s: [parse_angle(x) for x in s.split(",")], "protocol.thetas")
        if "site" in p:
            v = p["site"].strip()
            cfg.site = "center" if v == "center" else _get(p, "site", int, "protocol.site")
        if "epsilon" in p:
            cfg.epsilon = _get(p, "epsilon", float, "protocol.epsilon")
    if "evolution" in cp:
        e = cp["evolution"]
        cfg.evolver = e.get("evolver", "krylov").strip()
        for key, conv in (("dt", float), ("t_max", float), ("steps", int), ("krylov_dim", int), ("tol", float)):
            if key in e:
                setattr(cfg, key, _get(e, key, conv, f"evolution.{key}"))
        if "times" in e:
            cfg.times = _get(e, "times", _floats, "evolution.times")
    if "pre_quench" in cp:
        q = cp["pre_quench"]
        pq = {"model": q.get("model", "tilted_ising").strip()}
        for key in ("h0z", "h0x", "t0"):
            if key in q:
                pq[key] = _get(q, key, float, f"pre_quench.{key}")
        if "t0" not in pq:
            raise ConfigError("pre_quench.t0: missing")
        cfg.pre_quench = pq
    if "spectrum" in cp:
        s = cp["spectrum"]
        spec = {}
        for key, conv in (("degree", int), ("trim", float), ("m", float)):
            if key in s:
                spec[key] = _get(s, key, conv, f"spectrum.{key}")
        if "reference" in s:
            spec["reference"] = s["reference"].strip()
        cfg.spectrum = spec
    if "u1" in cp:
        u = cp["u1"]
        u1 = {}
        if "s" in u:
            u1["s"] = _get(u, "s", int, "u1.s")
        if "draws" in u:
            u1["draws"] = _get(u, "draws", int, "u1.draws")
        if "density" in u:
            u1["density"] = u["density"].strip()
            _get(u, "density", parse_density, "u1.density")
        if "flips" in u:
            u1["flips"] = _get(u, "flips", lambda s: [int(x) for x in _floats(s)], "u1.flips")
        cfg.u1 = u1
    if "output" in cp:
        o = cp["output"]
        cfg.outdir = o.get("dir", cfg.outdir).strip()
        if "seed" in o:
            cfg.seed = _get(o, "seed", int, "output.seed")
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    """Builder preconditions and ranges, checked before any compute."""
    if cfg.boundary not in ("open", "periodic"):
        raise ConfigError(f"model.boundary: must be open or periodic, got {cfg.boundary!r}")
    if not 1 <= cfg.L <= state_engine.L_CAP:
        raise ConfigError(f"model.L: must lie in [1, {state_engine.L_CAP}]")
    try:
        cfg.hamiltonian()
    except (ModelError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None
    if not 0 <= cfg.site_index < cfg.L:
        raise ConfigError("protocol.site: outside the chain")
    if not 0 < cfg.epsilon < 1:
        raise ConfigError("protocol.epsilon: must lie in (0, 1)")
    if cfg.evolver not in ("krylov", "trotter"):
        raise ConfigError("evolution.evolver: must be krylov or trotter")
    if cfg.dt <= 0:
        raise ConfigError("evolution.dt: must be positive")
    grid = cfg.time_grid()
    if any(t < 0 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("evolution.times: must be nonnegative and increasing")
    if cfg.pre_quench:
        if cfg.pre_quench["model"] not in ("ising", "tilted_ising"):
            raise ConfigError("pre_quench.model: must be ising or tilted_ising")
        try:
            cfg.pre_quench_spec()
        except ModelError as exc:
            raise ConfigError(f"pre_quench: {exc}") from None


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# output helpers


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_times(cfg: ScenarioConfig) -> list[float]:
    grid = cfg.time_grid()
    if not grid:
        raise ConfigError("evolution.times: this command needs times or t_max/steps")
    return grid


# ---------------------------------------------------------------------------
# scenario pipeline shared by several commands


@dataclass
class Snapshot:
    t: float
    branch: state_engine.StateVector  # flipped branch (theta = pi/2 state)
    region: observables.EffectiveRegion
    states: dict  # theta -> protocol state


def run_protocol(cfg: ScenarioConfig, thetas) -> list[Snapshot]:
    h = cfg.hamiltonian()
    times = _require_times(cfg)
    kw = cfg.evolve_kwargs()
    method = kw.pop("method")
    site = cfg.site_index
    pq = cfg.pre_quench_spec()
    energy, residual = scar_action(h)
    out = []
    if pq is None and residual <= 1e-12:
        branch, _ = state_engine.evolve_series(h, state_engine.basis_state(cfg.L, [site]), times, method, **kw)
        for b in branch:
            states = {th: state_engine.combine_branches(b, th, energy) for th in thetas}
            out.append(Snapshot(b.time, b, observables.effective_region(b, cfg.epsilon, site), states))
        return out
    # no exact scar or a pre-quench: evolve each theta in full
    per_theta = {}
    for th in sorted(set(thetas) | {math.pi / 2}):
        start = state_engine.product_state_up(cfg.L)
        if pq is not None:
            start, _ = state_engine.evolve(pq.h0, start, pq.t0, method, **kw)
            start = state_engine.StateVector(cfg.L, start.amplitudes, 0.0)
        start = state_engine.apply_y_rotation(start, site, th)
        per_theta[th], _ = state_engine.evolve_series(h, start, times, method, **kw)
    for i, t in enumerate(times):
        b = per_theta[math.pi / 2][i]
        states = {th: per_theta[th][i] for th in thetas}
        out.append(Snapshot(t, b, observables.effective_region(b, cfg.epsilon, site), states))
    return out


def interior(snaps: list[Snapshot], L: int) -> list[Snapshot]:
    """Snapshots taken before the region reaches either end of the chain."""
    out = []
    for s in snaps:
        if s.region.left == 0 or s.region.right == L - 1:
            break
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_scarcheck(cfg: ScenarioConfig, out: Path) -> int:
    h = cfg.hamiltonian()
    energy, residual = scar_action(h)
    report = {
        "model": h.label,
        "L": cfg.L,
        "boundary": cfg.boundary,
        "n_terms": len(h.terms),
        "scar_energy": energy,
        "residual": residual,
        "is_scar": residual <= 1e-12,
    }
    if cfg.L <= 12:
        report["hermitian"] = is_hermitian(h)
        report["comm_Sz"] = commutator_norm(h, total_sz(cfg.L))
        if cfg.model == "h1" and cfg.boundary == "open":
            report["comm_semilocal_charge"] = commutator_norm(h, semilocal_charge(cfg.L)[1])
    write_json(out / "scar.json", report)
    write_json(out / "model.json", h.to_dict())
    print(f"scar energy {energy:.12g}  residual {residual:.3e}")
    return EXIT_OK if report["is_scar"] else EXIT_INVARIANT


def cmd_evolve(cfg: ScenarioConfig, out: Path) -> int:
    snaps = run_protocol(cfg, [cfg.theta])
    h = cfg.hamiltonian()
    summary, prof_rows, dsz_rows = [], [], []
    for s in snaps:
        st = s.states[cfg.theta]
        prof = observables.magnetization_profile(st, cfg.theta)
        for site, v in enumerate(prof.sz):
            prof_rows.append((s.t, site, v))
        d = observables.delta_sz(st)
        dsz_rows.append((s.t, d))
        amps = st.amplitudes
        top = np.argsort(-np.abs(amps), kind="stable")[:4]
        summary.append({
            "t": s.t,
            "norm": st.norm(),
            "energy": state_engine.expectation(st, h),
            "delta_sz": d,
            "largest_amplitudes": [[int(i), float(abs(amps[i]) ** 2)] for i in top],
        })
    write_csv(out / "profile.csv", ["t", "site", "sz"], prof_rows)
    write_csv(out / "delta_sz.csv", ["t", "delta_sz"], dsz_rows)
    write_json(out / "evolve.json", {"theta": cfg.theta, "times": summary})
    return EXIT_OK


def cmd_omega(cfg: ScenarioConfig, out: Path) -> int:
    snaps = run_protocol(cfg, [math.pi / 2])
    rows = [(s.t, s.region.left, s.region.right, s.region.size, s.region.w_out) for s in snaps]
    write_csv(out / "omega.csv", ["t", "left", "right", "size", "w_out"], rows)
    inner = interior(snaps, cfg.L)
    if len(inner) >= 5:
        rep = analysis.classify_spreading([s.t for s in inner], [s.region for s in inner])
        write_json(out / "omega.json", {"spreading": rep.to_dict(), "interior_points": len(inner)})
    return EXIT_OK


def _fcs_name(t: float, theta: float | None = None) -> str:
    base = f"fcs_{t:.4f}"
    return base + (f"_theta{theta:.4f}" if theta is not None else "") + ".csv"


def cmd_fcs(cfg: ScenarioConfig, out: Path) -> int:
    snaps = run_protocol(cfg, [cfg.theta])
    report = []
    for s in snaps:
        F = observables.fcs(s.states[cfg.theta], cfg.theta)
        write_csv(out / _fcs_name(s.t), ["m", "P"], zip(F.m, F.P))
        report.append({"t": s.t, "bimodality": analysis.detect_bimodality(F).to_dict(),
                       "convention_warning": F.convention_warning})
    write_json(out / "fcs.json", {"theta": cfg.theta, "times": report})
    return EXIT_OK


def _neff_rows(cfg, snaps, theta):
    rows, unconverged = [], 0
    for s in snaps:
        K = observables.covariance_matrix(s.states[theta], s.region)
        q = observables.quantumness_iterative(K, seed=cfg.seed)
        unconverged += not q.converged
        rows.append((s.t, s.region.size, q.value, q.converged))
    return rows, unconverged


def _fit_neff(rows):
    """Fit over the whole series; saturated points repeat ``|Omega| = L``."""
    try:
        fit = analysis.fit_growth([r[1] for r in rows], [r[2] for r in rows])
    except analysis.AnalysisError as exc:
        return {"error": str(exc)}
    d = fit.to_dict()
    d.update(beta1_zero=fit.beta1_is_zero(), beta1_positive=fit.beta1_positive())
    return d


def cmd_quantumness(cfg: ScenarioConfig, out: Path) -> int:
    snaps = run_protocol(cfg, [cfg.theta])
    rows, bad = _neff_rows(cfg, snaps, cfg.theta)
    write_csv(out / "neff.csv", ["t", "omega_size", "neff", "converged"], rows)
    last = snaps[-1]
    q = observables.quantumness_iterative(
        observables.covariance_matrix(last.states[cfg.theta], last.region), seed=cfg.seed
    )
    write_csv(out / "trace.csv", ["iter", "value"], enumerate(q.trace))
    fit = _fit_neff(rows)
    write_json(out / "fit.json", {"theta": cfg.theta, "fit": fit})
    return EXIT_CONVERGENCE if bad else EXIT_OK


def cmd_spectrum(cfg: ScenarioConfig, out: Path) -> int:
    h = cfg.hamiltonian()
    opts = cfg.spectrum
    if cfg.boundary != "periodic":
        raise ConfigError("model.boundary: spectrum needs a periodic chain")
    m = opts.get("m", 0.0)
    sectors = spectral.h_tau_sectors(cfg.L, m) if cfg.model == "h_tau" else spectral.magnetization_sectors(cfg.L, m)
    spectra, stats = spectral.level_statistics(h, sectors, opts.get("degree", 7), opts.get("trim", 0.05))
    rows = []
    for ss in spectra:
        for i, e in enumerate(ss.eigenvalues):
            rows.append((ss.spec.k, ss.spec.parities.get("Px", 0), ss.spec.parities.get("Pz", 0), i, e))
    write_csv(out / "levels.csv", ["k", "Px", "Pz", "index", "E"], rows)
    write_csv(out / "spacing_cdf.csv", ["s", "cdf"], zip(stats.cdf_s, stats.cdf))
    largest = max(spectra, key=lambda s: s.dimension)
    r, _ = spectral.gap_ratios(largest.eigenvalues)
    summary = stats.summary()
    summary.update(
        largest_sector=largest.spec.describe(),
        largest_dim=largest.dimension,
        largest_mean_r=float(np.mean(r)) if r.size else None,
        poisson_r=spectral.POISSON_R,
        goe_r=spectral.GOE_R,
    )
    write_json(out / "stats.json", summary)
    print(f"<r> = {stats.mean_r:.4f} over {stats.n_ratios} ratios")
    return EXIT_OK


def cmd_dualcheck(cfg: ScenarioConfig, out: Path) -> int:
    if cfg.model not in ("h1", "h_tau"):
        raise ConfigError("model.name: dualcheck needs h1 or h_tau parameters")
    params = {k: v for k, v in cfg.params.items()}
    rep = spectral.duality_spectrum_check(cfg.L, **params)
    write_json(out / "dual.json", rep)
    print(f"duality: dims {rep['dim_direct']}/{rep['dim_dual']}, max deviation {rep['max_deviation']:.3e}")
    return EXIT_OK if rep["spectra_match"] else EXIT_INVARIANT


def cmd_u1check(cfg: ScenarioConfig, out: Path) -> int:
    h = cfg.hamiltonian()
    opts = cfg.u1
    density = parse_density(opts.get("density", "z0"))
    times = _require_times(cfg)
    kw = cfg.evolve_kwargs()
    try:
        rep = analysis.u1_macroscopic_check(
            h, opts.get("s", 1), density, times, cfg.epsilon, opts.get("flips"), **kw
        )
    except analysis.AnalysisError as exc:
        raise InvariantError(str(exc)) from None
    write_json(out / "u1.json", {
        "max_ratio_expectation": rep.max_ratio_expectation,
        "max_ratio_variance": rep.max_ratio_variance,
        "holds": rep.holds,
        "detail": rep.to_dict(),
    })
    return EXIT_OK if rep.holds else EXIT_INVARIANT


def cmd_catreport(cfg: ScenarioConfig, out: Path) -> int:
    """Evolution, region, counting statistics and quantumness, then the cat verdict.

    Macroscopic difference: ``Delta S^z`` of the flipped branch grows linearly
    in time (regression slope with positive lower confidence bound).  Cat
    state: additionally the generic-theta distribution is two separated peaks
    and the ``theta = pi/2`` quantumness has ``beta_1 ~ 0``.
    """
    generic = [th for th in cfg.thetas if not math.isclose(th, math.pi / 2)]
    thetas = [math.pi / 2] + generic
    snaps = run_protocol(cfg, thetas)
    write_csv(out / "omega.csv", ["t", "left", "right", "size", "w_out"],
              [(s.t, s.region.left, s.region.right, s.region.size, s.region.w_out) for s in snaps])
    dsz = [(s.t, observables.delta_sz(s.states[math.pi / 2])) for s in snaps]
    write_csv(out / "delta_sz.csv", ["t", "delta_sz"], dsz)
    inner = interior(snaps, cfg.L) or snaps
    tt = np.array([s.t for s in inner])
    dd = np.array([observables.delta_sz(s.states[math.pi / 2]) for s in inner])
    macro = False
    slope = float("nan")
    if tt.size >= 3:
        lr = sst.linregress(tt, dd)
        q = sst.t.ppf(0.975, tt.size - 2)
        slope = float(lr.slope)
        macro = bool(lr.slope - q * lr.stderr > 0)
    spreading = (
        analysis.classify_spreading(tt, [s.region for s in inner]).to_dict()
        if tt.size >= 5 else {"class": "undetermined"}
    )
    per_theta, bad = {}, 0
    for th in thetas:
        tag = f"theta_{th:.4f}"
        d = out / tag
        d.mkdir(exist_ok=True)
        rows, nb = _neff_rows(cfg, snaps, th)
        bad += nb
        write_csv(d / "neff.csv", ["t", "omega_size", "neff", "converged"], rows)
        fit = _fit_neff(rows)
        F = observables.fcs(snaps[-1].states[th], th)
        write_csv(d / _fcs_name(snaps[-1].t), ["m", "P"], zip(F.m, F.P))
        bim = analysis.detect_bimodality(F).to_dict()
        per_theta[tag] = {"theta": th, "fit": fit, "bimodality": bim}
        write_json(d / "fit.json", per_theta[tag])
    half = per_theta[f"theta_{math.pi / 2:.4f}"]
    beta1_zero = bool(half["fit"].get("beta1_zero", False))
    bimodal = any(per_theta[f"theta_{th:.4f}"]["bimodality"]["separated"] for th in generic)
    verdict = {
        "macroscopically_different": macro,
        "cat_state": bool(macro and bimodal and beta1_zero),
        "spreading": spreading["class"],
        "delta_sz_slope": slope,
        "beta1_zero_at_half_pi": beta1_zero,
        "bimodal_generic_theta": bimodal,
        "per_theta": per_theta,
    }
    write_json(out / "verdict.json", verdict)
    print(f"macroscopically different: {macro}; cat state: {verdict['cat_state']}; spreading: {spreading['class']}")
    return EXIT_CONVERGENCE if bad else EXIT_OK


COMMANDS = {
    "scarcheck": cmd_scarcheck,
    "evolve": cmd_evolve,
    "omega": cmd_omega,
    "fcs": cmd_fcs,
    "quantumness": cmd_quantumness,
    "spectrum": cmd_spectrum,
    "dualcheck": cmd_dualcheck,
    "u1check": cmd_u1check,
    "catreport": cmd_catreport,
}


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scarcat", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="INI scenario file")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--seed", type=int, help="overrides [output] seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out or cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        limit = _thread_limit()
        try:
            return COMMANDS[args.command](cfg, out)
        finally:
            if limit is not None:
                limit.unregister()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except state_engine.EvolutionError as exc:
        print(f"state_engine: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InvariantError, spectral.SymmetryError, AssertionError) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
