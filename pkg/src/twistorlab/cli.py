"""Batch front-end: solve -> reconstruct -> verify, plus single geodesic traces.

Every command writes plain CSV/JSON into the output directory and a JSON
report carrying the SHA-256 of the canonical run configuration and the
library versions.  Exit codes: 0 pass, 2 numerical-audit failure,
3 convergence failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .cp1_geometry import PointZ, inverse_stereographic, tau
from .disk_solver import EmbeddingN, GridSpec, SolverConfig, build_family, deviation_from_standard, format_number
from .errors import ConfigError, ConsistencyFailure, EmbeddingBoundError, NoConvergence, TwistorLabError
from .ew_reconstruct import (
    MetricConnectionField,
    ReconstructConfig,
    ReconstructionGrid,
    compatibility_residual,
    coordinate_torsion,
    einstein_weyl_residual_array,
    flat_field,
    reconstruct,
    standard_field,
)
from .geodesic_lab import (
    IncidenceSolver,
    boundary_direction,
    boundary_foliation_audit,
    closest_return,
    cross_validate,
    flat_connection,
    foliation_audit_fixed_t,
    integrate_geodesic,
    null_plane_residual,
    random_point_off_N,
    standard_connection,
    transversality_angle,
)

log = logging.getLogger("twistorlab")

EXIT_OK = 0
EXIT_AUDIT = 2
EXIT_CONVERGENCE = 3
EXIT_CONFIG = 4

ALL_AUDITS = (
    "connection",
    "einstein_weyl",
    "zoll",
    "null_surface",
    "causal",
    "cross_validation",
    "foliation",
    "null_plane",
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerifyConfig:
    audits: tuple[str, ...] = ALL_AUDITS
    connection_tol: float = 1e-3
    ew_tol: float = 1e-3
    closure_tol: float = 1e-5
    null_tol: float = 1e-4
    null_plane_tol: float = 1e-6
    deviation_tol: float = 1e-3
    n_pairs: int = 10
    n_surfaces: int = 5
    n_null_planes: int = 50
    n_foliation: int = 50
    n_psi: int = 32

    @classmethod
    def from_dict(cls, doc: dict) -> "VerifyConfig":
        _reject_unknown("verify", doc, {f.name for f in fields(cls)})
        doc = dict(doc)
        if "audits" in doc:
            bad = set(doc["audits"]) - set(ALL_AUDITS)
            if bad:
                raise ConfigError(f"unknown audits: {sorted(bad)}")
            doc["audits"] = tuple(doc["audits"])
        out = cls(**_coerce(cls, "verify", doc))
        for f in fields(cls):
            v = getattr(out, f.name)
            if f.name.endswith("_tol") and not v > 0:
                raise ConfigError(f"verify.{f.name} must be positive")
        return out


@dataclass(frozen=True)
class RunConfig:
    embedding: EmbeddingN = field(default_factory=lambda: EmbeddingN.from_dict({}))
    grid: GridSpec = GridSpec()
    solver: SolverConfig = SolverConfig()
    reconstruct: ReconstructConfig = ReconstructConfig()
    region: ReconstructionGrid = ReconstructionGrid()
    verify: VerifyConfig = VerifyConfig()
    output_dir: str = "twistorlab-out"
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        doc = dict(doc or {})
        _reject_unknown("config", doc, {"embedding", "grid", "solver", "reconstruct", "verify", "output_dir", "seed"})
        try:
            embedding = EmbeddingN.from_dict(doc.get("embedding", {}))
            solver = SolverConfig.from_dict(_coerce(SolverConfig, "solver", doc.get("solver", {})))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        grid = _grid_from_dict(doc.get("grid", {}))
        rec = dict(doc.get("reconstruct", {}))
        center = tuple(float(v) for v in rec.pop("center", (0.0, 0.0, 0.0)))
        shape = tuple(int(v) for v in rec.pop("shape", (17, 17, 9)))
        try:
            options = ReconstructConfig.from_dict(_coerce(ReconstructConfig, "reconstruct", rec))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("fd_step", "cone_tol", "frame_tol", "fd_tol", "lift_tol"):
            if not getattr(options, name) > 0:
                raise ConfigError(f"reconstruct.{name} must be positive")
        if solver.newton_tol <= 0 or solver.M_modes <= 0:
            raise ConfigError("solver tolerances and mode counts must be positive")
        if len(center) != 3 or len(shape) != 3:
            raise ConfigError("reconstruct.center and reconstruct.shape need three entries")
        region = ReconstructionGrid(center, options.fd_step, shape)
        return cls(
            embedding, grid, solver, options, region, VerifyConfig.from_dict(doc.get("verify", {})),
            str(doc.get("output_dir", "twistorlab-out")), int(doc.get("seed", 0)),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
            doc = json.loads(text) if Path(path).suffix == ".json" else yaml.safe_load(text)
        except (OSError, ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        rec = asdict(self.reconstruct)
        rec["center"] = list(self.region.center)
        rec["shape"] = list(self.region.shape)
        grid = {
            "lambda_resolution": self.grid.lambda_resolution,
            "t_range": [-self.grid.t_max, self.grid.t_max],
            "t_resolution": self.grid.t_resolution,
            "lambda_extent": self.grid.lambda_extent,
            "charts": list(self.grid.charts),
        }
        verify = asdict(self.verify)
        verify["audits"] = list(self.verify.audits)
        return {
            "embedding": self.embedding.to_dict(),
            "grid": grid,
            "solver": self.solver.to_dict(),
            "reconstruct": rec,
            "verify": verify,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def sha256(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _coerce(cls, section: str, doc: dict) -> dict:
    """Cast scalar entries to the type of the field default (YAML reads '1e-6' as a string)."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{section} must be a mapping")
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, value in doc.items():
        d = defaults.get(key)
        try:
            if isinstance(d, bool):
                if not isinstance(value, bool):
                    raise ValueError(value)
                out[key] = value
            elif isinstance(d, (int, float)):
                out[key] = type(d)(float(value)) if isinstance(d, float) else int(value)
            else:
                out[key] = value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{key}: invalid value {value!r}") from exc
    return out


def _reject_unknown(section: str, doc: dict, known: set) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{section} must be a mapping")
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown {section} keys: {sorted(extra)}")


def _grid_from_dict(doc: dict) -> GridSpec:
    _reject_unknown("grid", doc, {"lambda_resolution", "t_range", "t_resolution", "lambda_extent", "charts"})
    t_range = doc.get("t_range", [-3.0, 3.0])
    if len(t_range) != 2 or abs(t_range[0] + t_range[1]) > 1e-12 or t_range[1] <= 0:
        raise ConfigError(f"grid.t_range must be symmetric [-T, T], got {t_range}")
    charts = tuple(int(c) for c in doc.get("charts", (0, 1)))
    if not set(charts) <= {0, 1}:
        raise ConfigError("grid.charts must be a subset of [0, 1]")
    return GridSpec(
        lambda_resolution=int(doc.get("lambda_resolution", 5)),
        t_max=float(t_range[1]),
        t_resolution=int(doc.get("t_resolution", 7)),
        lambda_extent=float(doc.get("lambda_extent", 1.0)),
        charts=charts,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def provenance(cfg: RunConfig) -> dict:
    return {
        "config_sha256": cfg.sha256(),
        "versions": {"twistorlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args, fallback_dir: Path | None = None) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    elif fallback_dir is not None and (fallback_dir / "run_config.json").exists():
        cfg = RunConfig.load(fallback_dir / "run_config.json")
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = RunConfig(cfg.embedding, cfg.grid, cfg.solver, cfg.reconstruct, cfg.region, cfg.verify, cfg.output_dir, args.seed)
    return cfg


def _family_header(path: Path) -> tuple[EmbeddingN, SolverConfig]:
    """Embedding and solver settings of a stored family, without re-solving its nodes."""
    doc = json.loads((path / "family.json").read_text())
    return EmbeddingN.from_dict(doc["embedding"]), SolverConfig.from_dict(doc["solver"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    write_json(out / "run_config.json", cfg.to_dict())
    report = {"command": "solve", **provenance(cfg), "epsilon": cfg.embedding.epsilon}
    try:
        fam = build_family(cfg.embedding, cfg.grid, cfg.solver, progress=_progress("solve"))
    except EmbeddingBoundError as exc:
        report.update(status="refused", message=str(exc), epsilon_max=cfg.solver.epsilon_max)
        write_json(out / "solve_report.json", report)
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        report.update(status="no_convergence", frontier=str(exc))
        write_json(out / "solve_report.json", report)
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    (out / "family.json").write_text(fam.to_json())
    fam.write_csv(out / "family.csv")
    report.update(
        status="converged",
        n_nodes=len(fam.solutions),
        max_residual_on_N=fam.max_residual_on_N(),
        max_negative_modes=fam.max_neg_modes(),
        max_continuation_jump=fam.max_jump(),
        max_iterations=max(s.iterations for s in fam.solutions.values()),
    )
    if cfg.embedding.epsilon == 0:
        dev = max(deviation_from_standard(s) for s in fam.solutions.values())
        report["max_deviation_from_standard"] = dev
        print(f"family equals standard model: max deviation {format_number(dev)}")
    else:
        print(f"converged family: {len(fam.solutions)} disks, max residual on N {format_number(fam.max_residual_on_N())}")
    write_json(out / "solve_report.json", report)
    return EXIT_OK


def _synthetic_field(name: str, region: ReconstructionGrid) -> MetricConnectionField | None:
    if name == "flat":
        return flat_field(region)
    if name == "standard":
        return standard_field(region)
    return None


def residual_table(fld: MetricConnectionField) -> dict:
    table = {}
    for name, margin in (("torsion", 1), ("compat", 1), ("mu", 1), ("ew", 2), ("cone", 0), ("frame", 0), ("lift", 1)):
        if name in fld.residuals:
            table[name] = fld.max_residual(name, margin)
    return table


def center_residuals(fld: MetricConnectionField) -> dict:
    c = tuple(n // 2 for n in fld.grid.shape)
    return {k: float(v[c]) for k, v in fld.residuals.items() if np.isfinite(v[c])}


def cmd_reconstruct(args) -> int:
    family = Path(args.family)
    synthetic = args.family in ("flat", "standard")
    cfg = _load_config(args, None if synthetic else family)
    out = _out_dir(args, cfg)
    report = {"command": "reconstruct", **provenance(cfg), "region": cfg.region.to_dict()}
    grids = [cfg.region]
    if args.refine and args.refine > 1:
        r = int(args.refine)
        grids.append(ReconstructionGrid(cfg.region.center, cfg.region.step / r, cfg.region.shape, cfg.region.chart))
    fields_out = []
    for grid in grids:
        fld = _synthetic_field(args.family, grid)
        if fld is None:
            N, solver = _family_header(family)
            options = ReconstructConfig(**{**asdict(cfg.reconstruct), "fd_step": grid.step})
            try:
                fld = reconstruct(N, grid, solver, options, progress=_progress("reconstruct"))
            except ConsistencyFailure as exc:
                report.update(status="consistency_failure", message=str(exc))
                write_json(out / "reconstruct_report.json", report)
                print(f"consistency failure: {exc}", file=sys.stderr)
                return EXIT_AUDIT
            except NoConvergence as exc:
                report.update(status="no_convergence", message=str(exc))
                write_json(out / "reconstruct_report.json", report)
                return EXIT_CONVERGENCE
        fields_out.append(fld)
    fld = fields_out[0]
    fld.save(out / "field.npz")
    (out / "field.json").write_text(fld.to_json())
    fld.write_csv(out / "field.csv")
    report.update(status="done", residuals=residual_table(fld), Lambda_mean=fld.meta.get("Lambda_mean"), source=fld.meta.get("source"))
    if len(fields_out) > 1:
        coarse, fine = center_residuals(fields_out[0]), center_residuals(fields_out[1])
        r = float(args.refine)
        orders = {}
        for k in sorted(set(coarse) & set(fine)):
            if coarse[k] > 0 and fine[k] > 0:
                orders[k] = float(np.log(coarse[k] / fine[k]) / np.log(r))
        report["refinement"] = {"factor": r, "center_coarse": coarse, "center_fine": fine, "observed_order": orders}
        fields_out[1].save(out / "field_refined.npz")
    write_json(out / "reconstruct_report.json", report)
    for k, v in report["residuals"].items():
        print(f"{k:10s} {format_number(v)}")
    return EXIT_OK


def _random_on_N(N: EmbeddingN, rng) -> PointZ:
    first = inverse_stereographic(rng.normal(size=3))
    return PointZ(first, tau(N.phi_point(first)))


def run_audits(N: EmbeddingN, solver_cfg: SolverConfig, fld: MetricConnectionField, vcfg: VerifyConfig, seed: int) -> dict:
    """All verification audits; each entry carries a 'pass' flag."""
    rng = np.random.default_rng(seed)
    solver = IncidenceSolver(N, solver_cfg)
    res = {}
    h = fld.grid.step
    center = np.array(fld.grid.center, dtype=float)

    def guarded(name, fn):
        if name not in vcfg.audits:
            return
        try:
            res[name] = fn()
        except TwistorLabError as exc:
            res[name] = {"pass": False, "error": f"{type(exc).__name__}: {exc}"}
        log.info("audit %s: %s", name, "pass" if res[name]["pass"] else "FAIL")

    def connection():
        valid = fld.valid
        tors = coordinate_torsion(fld.Gamma)[valid]
        comp = compatibility_residual(fld.g, fld.Gamma, fld.a, h, fld.fd_order)
        comp = comp[valid & np.isfinite(comp)]
        out = {"torsion": float(np.max(tors)), "compat": float(np.max(comp)) if comp.size else float("nan")}
        if "mu" in fld.residuals:
            mu = fld.residuals["mu"][valid]
            out["mu"] = float(np.nanmax(mu))
        out["tolerance"] = vcfg.connection_tol
        out["pass"] = bool(all(v < vcfg.connection_tol for k, v in out.items() if k in ("torsion", "compat", "mu")))
        return out

    def einstein_weyl():
        ew, _ = einstein_weyl_residual_array(fld.g, fld.Gamma, h, fld.curvature_order, fld.e)
        v = float(np.nanmax(ew))
        return {"max": v, "tolerance": vcfg.ew_tol, "pass": v < vcfg.ew_tol}

    def zoll():
        gaps = []
        for _ in range(vcfg.n_pairs):
            while True:
                p, q = _random_on_N(N, rng), _random_on_N(N, rng)
                if p.first.chordal_distance(q.first) > 0.3:
                    break
            iset = solver.incidence_C_pq(p, q, n_psi=vcfg.n_psi, closure_tol=vcfg.closure_tol)
            gaps.append(iset.gap)
        return {"gaps": gaps, "max_gap": max(gaps), "tolerance": vcfg.closure_tol, "pass": max(gaps) < vcfg.closure_tol}

    def null_surface():
        dets = []
        for _ in range(vcfg.n_surfaces):
            iset = solver.incidence_S_p(_random_on_N(N, rng), np.linspace(-1.0, 1.0, 5), n_psi=8)
            dets.append(iset.extra["max_induced_det"])
        return {"max_induced_det": dets, "tolerance": vcfg.null_tol, "pass": max(dets) < vcfg.null_tol}

    def causal():
        ts = np.linspace(-3.0, 3.0, 13)
        cp = solver.incidence_C_p(random_point_off_N(N, rng), ts)
        p, v = boundary_direction(solver, rng.uniform(-0.5, 0.5, 3), float(rng.uniform(0, 2 * np.pi)))
        cv = solver.incidence_C_pv(p, v, ts)
        ok_p = all(c == "timelike" for c in cp.causal)
        worst_null = float(np.max(np.abs(cv.causal_values)))
        return {
            "C_p_types": sorted(set(cp.causal)),
            "C_pv_max_abs_causal_value": worst_null,
            "tolerance": vcfg.null_tol,
            "pass": bool(ok_p and worst_null < vcfg.null_tol),
        }

    def cross_val():
        x0 = center
        span = 0.5 * h * (min(fld.grid.shape) - 1)
        ts = x0[2] + np.linspace(-3 * span, 3 * span, 31)
        p_int = solver.interior_point(x0, 0.3 + 0.2j)
        p_b, v_b = boundary_direction(solver, x0, 0.7)
        q_b = solver.boundary_point(x0, 0.7 + np.pi)
        sets = [
            solver.incidence_C_p(p_int, ts),
            solver.incidence_C_pv(p_b, v_b, ts),
            solver.incidence_C_pq(p_b, q_b, n_psi=128),
        ]
        reports = [cross_validate(fld, s, step=h / 5) for s in sets]
        worst = max(r["max_deviation"] for r in reports)
        return {"reports": reports, "max_deviation": worst, "tolerance": vcfg.deviation_tol, "pass": worst < vcfg.deviation_tol}

    def foliation():
        fixed = foliation_audit_fixed_t(solver, vcfg.n_foliation, seed=int(rng.integers(2**31)))
        bnd = boundary_foliation_audit(solver, random_point_off_N(N, rng), np.linspace(-2.0, 2.0, 9))
        angle = transversality_angle(solver, center, 0.3 + 0.1j, -0.2 - 0.3j)
        return {
            "fixed_t_failures": fixed["failures"],
            "fixed_t_trials": fixed["trials"],
            "boundary_min_distance": bnd["min_pairwise_distance"],
            "transversality_angle": angle,
            "pass": bool(not fixed["failures"] and bnd["disjoint"] and angle > 0),
        }

    def null_plane():
        dets = []
        for _ in range(vcfg.n_null_planes):
            x = rng.uniform(-1.0, 1.0, 3)
            dets.append(abs(null_plane_residual(solver, x, float(rng.uniform(0, 2 * np.pi)))))
        return {"max_induced_det": max(dets), "tolerance": vcfg.null_plane_tol, "pass": max(dets) < vcfg.null_plane_tol}

    guarded("connection", connection)
    guarded("einstein_weyl", einstein_weyl)
    guarded("zoll", zoll)
    guarded("null_surface", null_surface)
    guarded("causal", causal)
    guarded("cross_validation", cross_val)
    guarded("foliation", foliation)
    guarded("null_plane", null_plane)
    return res


def cmd_verify(args) -> int:
    family = Path(args.family)
    cfg = _load_config(args, family)
    out = _out_dir(args, cfg)
    N, solver_cfg = _family_header(family)
    fld = _load_field(args.field, cfg.region)
    if args.tamper:
        fld = fld.tampered(args.tamper)
    audits = run_audits(N, solver_cfg, fld, cfg.verify, cfg.seed)
    passed = all(a["pass"] for a in audits.values())
    report = {"command": "verify", **provenance(cfg), "audits": audits, "pass": passed, "tamper": args.tamper}
    write_json(out / "verify_report.json", report)
    for name, a in audits.items():
        print(f"{'PASS' if a['pass'] else 'FAIL'} {name}")
    return EXIT_OK if passed else EXIT_AUDIT


def _load_field(spec: str, region: ReconstructionGrid) -> MetricConnectionField:
    synthetic = _synthetic_field(spec, region)
    if synthetic is not None:
        return synthetic
    path = Path(spec)
    if path.is_dir():
        path = path / "field.npz"
    return MetricConnectionField.load(path)


def _parse_vec(text: str) -> np.ndarray:
    try:
        v = np.array([float(s) for s in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}") from exc
    if v.shape != (3,):
        raise ConfigError(f"expected three comma-separated numbers, got {text!r}")
    return v


def cmd_geodesic(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    x0, v0 = _parse_vec(args.x0), _parse_vec(args.v0)
    if args.field == "flat":
        conn = flat_connection()
    elif args.field == "standard":
        conn = standard_connection()
    else:
        conn = _load_field(args.field, cfg.region)
    trace = integrate_geodesic(conn, x0, v0, args.length, step=args.step, on_exit="stop")
    trace.to_csv(out / "trace.csv")
    report = {
        "command": "geodesic",
        **provenance(cfg),
        "x0": x0,
        "v0": v0,
        "causal_type": trace.causal_type,
        "length": trace.length(),
        "complete": trace.complete,
        "exit_point": trace.exit_point,
        "accepted_steps": trace.accepted_steps,
        "rejected_steps": trace.rejected_steps,
        "causal_drift": trace.causal_drift(),
    }
    s_ret, d_ret = closest_return(trace)
    if d_ret < 1e-6:
        report["closed"] = True
        report["period"] = s_ret
        print(f"closed {trace.causal_type} geodesic, period {format_number(s_ret)}")
    else:
        report["closed"] = False
        print(f"{trace.causal_type} geodesic, length {format_number(trace.length())}, complete={trace.complete}")
    write_json(out / "trace.json", report)
    return EXIT_OK


def _progress(label: str):
    def report(done: int, total: int) -> None:
        if done == total or done % max(1, total // 10) == 0:
            log.info("%s: %d/%d", label, done, total)

    return report


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twistorlab", description=__doc__.splitlines()[0])
    parser.add_argument("--output", help="output directory (overrides output_dir from the config)")
    parser.add_argument("--refine", type=int, default=None, help="also run at step/refine and report observed orders")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized audits (overrides the config)")
    parser.add_argument("--config", help="YAML or JSON run configuration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the disk family on the configured grid")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("reconstruct", help="reconstruct metric and connection on the configured box")
    p.add_argument("--family", required=True, help="family directory, or 'flat' / 'standard' for synthetic fields")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify", help="run the geometric audits")
    p.add_argument("--family", required=True)
    p.add_argument("--field", required=True, help="field directory or .npz, or 'flat' / 'standard'")
    p.add_argument("--tamper", type=float, default=0.0, help="add an antisymmetric change of this size to Gamma")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("geodesic", help="integrate one geodesic")
    p.add_argument("--field", required=True, help="field directory or .npz, or 'flat' / 'standard'")
    p.add_argument("--x0", required=True, help="lambda_re,lambda_im,t")
    p.add_argument("--v0", required=True, help="a,b,c")
    p.add_argument("--length", type=float, required=True)
    p.add_argument("--step", type=float, default=0.01)
    p.set_defaults(func=cmd_geodesic)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
