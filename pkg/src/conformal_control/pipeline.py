"""End-to-end pipeline orchestration behind the command-line interface.

Each run command reads a JSON config plus a dataset CSV, walks the stages
(split, train/synthesize, calibrate, tighten, solve, validate), and writes a
deterministic ``manifest.json`` to the output directory together with
trajectory and region CSV files.  Wall-clock timings go to a separate
``timings.json`` sidecar so that manifests are byte-identical across runs
with identical seeds.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .conformal import BallRegion, EllipsoidRegion
from .data import (
    DisturbanceGeneratorSpec,
    atomic_write_text,
    generator_from_config,
    read_dataset_csv,
    write_dataset_csv,
)
from .errors import ConfigError, InfeasibleError, InsufficientCalibrationError, StageError
from .estimators import DirectController, IndirectController
from .indirect import verify_invariance
from .montecarlo import monte_carlo_validate
from .scenario import (
    REFERENCE_SCENARIO_COUNT,
    build_scenario_program,
    scenario_requirement_note,
    solve_scenario_program,
)
from .systems import ConstraintSpec, CostSpec, Ellipsoid, LinearSystem

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
TIMINGS_NAME = "timings.json"


# ---------------------------------------------------------------------------
# configuration

def load_config(path) -> dict:
    try:
        with open(path) as handle:
            cfg = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"config missing '{where}.{key}'" if where else f"config missing '{key}'")
    return cfg[key]


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    system = _require(cfg, "system", "")
    for key in ("A", "B", "N", "x0"):
        _require(system, key, "system")
    constraints = _require(cfg, "constraints", "")
    for key in ("Q", "theta"):
        _require(constraints, key, "constraints")
    if "P" not in constraints and "P_t" not in constraints:
        raise ConfigError("config missing 'constraints.P' (shared) or 'constraints.P_t' (per step)")
    cost = _require(cfg, "cost", "")
    for key in ("state_weight", "input_weight", "terminal_weight"):
        _require(cost, key, "cost")
    data = _require(cfg, "data", "")
    for key in ("k", "k1"):
        _require(data, key, "data")
    if not data["k1"] + 1 < data["k"]:
        raise ConfigError("data split needs k1 + 1 < k")


def build_system(cfg: dict) -> LinearSystem:
    s = cfg["system"]
    return LinearSystem(A=np.array(s["A"], dtype=float), B=np.array(s["B"], dtype=float), N=int(s["N"]))


def build_constraints(cfg: dict, sys: LinearSystem) -> ConstraintSpec:
    c = cfg["constraints"]
    theta = float(c["theta"])
    Q = np.array(c["Q"], dtype=float)
    if "P_t" in c:
        ps = c.get("p_t", [[0.0] * sys.n] * sys.N)
        sets = tuple(
            Ellipsoid(np.array(p, dtype=float), np.array(P, dtype=float))
            for P, p in zip(c["P_t"], ps)
        )
        spec = ConstraintSpec(state_sets=sets, input_set=Ellipsoid(np.zeros(sys.m), Q), theta=theta)
    else:
        P = np.array(c["P"], dtype=float)
        p = np.array(c.get("p", [0.0] * sys.n), dtype=float)
        spec = ConstraintSpec.uniform(P, p, Q, theta, sys.N)
    spec.check_horizon(sys)
    return spec


def build_cost(cfg: dict) -> CostSpec:
    c = cfg["cost"]
    return CostSpec(
        state_weight=np.array(c["state_weight"], dtype=float),
        input_weight=np.array(c["input_weight"], dtype=float),
        terminal_weight=np.array(c["terminal_weight"], dtype=float),
    )


def build_generator(cfg: dict) -> DisturbanceGeneratorSpec | None:
    block = cfg.get("data", {}).get("generator")
    if block is None:
        return None
    if block == "double-integrator":
        from .data import double_integrator_generator

        return double_integrator_generator()
    return generator_from_config(block)


def resolve_seeds(cfg: dict, override: int | None) -> dict:
    """Stage seeds from the config; a --seed override rebases all of them."""
    data_seed = int(cfg.get("data", {}).get("seed", 0))
    method = cfg.get("method", {})
    train_seed = int(method.get("direct", {}).get("seed", data_seed + 1))
    validation_seed = int(cfg.get("validation", {}).get("seed", data_seed + 2))
    if override is not None:
        data_seed, train_seed, validation_seed = override, override + 1, override + 2
    return {"data": data_seed, "train": train_seed, "validation": validation_seed}


# ---------------------------------------------------------------------------
# helpers

@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _write_manifest(out_dir: Path, manifest: dict) -> Path:
    path = out_dir / MANIFEST_NAME
    atomic_write_text(path, json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def _write_timings(out_dir: Path, timings: dict) -> None:
    atomic_write_text(
        out_dir / TIMINGS_NAME,
        json.dumps({k: round(v, 6) for k, v in timings.items()}, indent=2, sort_keys=True) + "\n",
    )


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _region_rows(name: str, region) -> list:
    rows = []
    if isinstance(region, BallRegion):
        rows.append(f"{name}_radius,,{float(region.radius)!r},")
        if region.dim == 2:
            ball = Ellipsoid(np.zeros(2), np.eye(2) / region.radius**2)
            for i, pt in enumerate(ball.boundary_polyline()):
                rows.append(f"{name},{i},{float(pt[0])!r},{float(pt[1])!r}")
    elif isinstance(region, EllipsoidRegion):
        if region.ellipsoid.dim == 2:
            for i, pt in enumerate(region.ellipsoid.boundary_polyline()):
                rows.append(f"{name},{i},{float(pt[0])!r},{float(pt[1])!r}")
    return rows


def _write_region_csv(out_dir: Path, constraints, tightened, region_error, region_input) -> None:
    """Boundary polylines (2-d) plus radii for plotting by external tooling."""
    rows = ["name,index,x0,x1"]
    seen = set()
    for t, s in enumerate(constraints.state_sets):
        key = (s.shape.tobytes(), s.center.tobytes())
        if key in seen:
            continue
        seen.add(key)
        if s.dim == 2:
            for i, pt in enumerate(s.boundary_polyline()):
                rows.append(f"state_set_t{t + 1},{i},{float(pt[0])!r},{float(pt[1])!r}")
            if tightened is not None:
                shrunk = Ellipsoid(s.center, s.shape / tightened.rho_state[t] ** 2)
                for i, pt in enumerate(shrunk.boundary_polyline()):
                    rows.append(f"tightened_set_t{t + 1},{i},{float(pt[0])!r},{float(pt[1])!r}")
    rows.extend(_region_rows("error_region", region_error))
    rows.extend(_region_rows("input_region", region_input))
    atomic_write_text(out_dir / "regions.csv", "\n".join(rows) + "\n")


def _write_solution_csv(out_dir: Path, z_star: np.ndarray, v_star: np.ndarray) -> None:
    n = z_star.shape[1]
    m = v_star.shape[1]
    header = ",".join(["t"] + [f"z{i}" for i in range(n)] + [f"v{i}" for i in range(m)])
    rows = [header]
    for t in range(z_star.shape[0]):
        zpart = ",".join(repr(float(z)) for z in z_star[t])
        vpart = ",".join(repr(float(v)) for v in v_star[t]) if t < v_star.shape[0] else "," * (m - 1)
        rows.append(f"{t},{zpart},{vpart}")
    atomic_write_text(out_dir / "solution.csv", "\n".join(rows) + "\n")


def _write_samples_csv(out_dir: Path, states: np.ndarray) -> None:
    n = states.shape[2]
    header = ",".join(["trial", "t"] + [f"x{i}" for i in range(n)])
    rows = [header]
    for trial in range(states.shape[0]):
        for t in range(states.shape[1]):
            coords = ",".join(repr(float(v)) for v in states[trial, t])
            rows.append(f"{trial},{t},{coords}")
    atomic_write_text(out_dir / "samples.csv", "\n".join(rows) + "\n")


def _dataset_for_run(cfg: dict, data_path) -> np.ndarray:
    sequences = read_dataset_csv(data_path)
    expected = int(cfg["data"]["k"]) + 1
    if sequences.shape[0] != expected:
        raise ConfigError(
            f"dataset has {sequences.shape[0]} sequences but config expects k+1={expected}"
        )
    return sequences


def _validation_sampler(cfg: dict):
    generator = build_generator(cfg)
    if generator is None:
        raise ConfigError("validation requires a 'data.generator' block to draw fresh disturbances")
    return generator


def _common_manifest(cfg: dict, command: str, data_path, seeds: dict) -> dict:
    k1 = int(cfg["data"]["k1"])
    k = int(cfg["data"]["k"])
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
        "data": {
            "path": str(data_path),
            "sha256": _sha256(data_path),
            "k": k,
            "k1": k1,
            "calibration_indices": [0, k1],
            "training_indices": [k1 + 1, k],
        },
        "seeds": seeds,
    }


# ---------------------------------------------------------------------------
# commands

def generate_data(cfg: dict, out_dir, seed_override: int | None = None) -> Path:
    """gen-data: write k+1 seeded disturbance sequences to <out>/dataset.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = build_generator(cfg)
    if generator is None:
        raise ConfigError("gen-data requires a 'data.generator' block")
    sys = build_system(cfg)
    seeds = resolve_seeds(cfg, seed_override)
    count = int(cfg["data"]["k"]) + 1
    rng = np.random.default_rng(seeds["data"])
    sequences = generator.sample_sequences(rng, count, sys.N)
    path = out_dir / "dataset.csv"
    write_dataset_csv(path, sequences)
    return path


def run_direct(cfg: dict, data_path, out_dir, seed_override=None, trials_override=None) -> dict:
    return _run_method("direct", cfg, data_path, out_dir, seed_override, trials_override)


def run_indirect(cfg: dict, data_path, out_dir, seed_override=None, trials_override=None) -> dict:
    return _run_method("indirect", cfg, data_path, out_dir, seed_override, trials_override)


def _run_method(method: str, cfg, data_path, out_dir, seed_override, trials_override) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    seeds = resolve_seeds(cfg, seed_override)
    sys = build_system(cfg)
    constraints = build_constraints(cfg, sys)
    cost = build_cost(cfg)
    manifest = _common_manifest(cfg, f"run-{method}", data_path, seeds)
    manifest["method"] = method

    with _stage("load-data", timings):
        sequences = _dataset_for_run(cfg, data_path)
    calibration_size = int(cfg["data"]["k1"]) + 1

    method_cfg = cfg.get("method", {}).get(method, {})
    if method == "direct":
        controller = DirectController(
            system=sys,
            constraints=constraints,
            cost=cost,
            calibration_size=calibration_size,
            gamma=method_cfg.get("gamma"),
            population=int(method_cfg.get("population", 150)),
            generations=int(method_cfg.get("generations", 50)),
            gene_bound=float(method_cfg.get("gene_bound", 10.0)),
            seed=seeds["train"],
        )
        stage_name = "train"
    else:
        grid = None
        if "grid_step" in method_cfg:
            from .indirect import default_multiplier_grid

            grid = default_multiplier_grid(float(method_cfg["grid_step"]))
        controller = IndirectController(
            system=sys,
            constraints=constraints,
            cost=cost,
            calibration_size=calibration_size,
            grid=grid,
            mvee_tol=float(method_cfg.get("mvee_tol", 1e-7)),
            margin=float(method_cfg.get("margin", 1e-8)),
        )
        stage_name = "synthesize"

    with _stage(stage_name, timings):
        try:
            controller.fit(sequences)
        except InsufficientCalibrationError as exc:
            raise StageError("calibrate", exc) from exc

    results: dict = {"K": controller.gain_}
    if method == "direct":
        tr = controller.train_result_
        results["training"] = {
            "eta_e": tr.eta_e,
            "eta_u": tr.eta_u,
            "feasible": tr.feasible,
            "fitness": tr.fitness,
            "generations": len(tr.fitness_history) - 1,
        }
        results["C_e"] = controller.region_error_.radius
        results["C_Ke"] = controller.region_input_.radius
    else:
        synth = controller.synthesis_
        region = controller.disturbance_region_
        results["Y"] = region.Y
        results["C_w"] = region.C_w
        results["Phi"] = synth.Phi
        results["lambda0"] = synth.lambda0
        results["lambda1"] = synth.lambda1
        results["trace_phi_hat"] = synth.trace_value
        results["certificate_margins"] = synth.certificate_margins
        results["C_e"] = controller.error_ball_.radius
        results["C_Ke"] = controller.region_input_.radius
        with _stage("verify", timings):
            report = verify_invariance(sys, synth.K, synth.Phi, region.Y, lambdas=(synth.lambda0, synth.lambda1))
        results["invariance"] = {
            "passed": report.passed,
            "worst_membership": report.worst_membership,
            "bmi_margin": report.bmi_margin,
        }

    with _stage("tighten", timings):
        check = controller.tightening_check()
        results["tightening_conditions"] = {
            "ok": check.ok,
            "state_effective_radius": check.state_effective_radius,
            "state_radius_bound": check.state_radius_bound,
            "input_effective_radius": check.input_effective_radius,
            "input_radius_bound": check.input_radius_bound,
        }
        if not check.ok:
            raise InfeasibleError("tightening conditions fail: prediction regions too large")

    x0 = np.array(cfg["system"]["x0"], dtype=float)
    with _stage("solve", timings):
        solution = controller.plan(x0)
        if not solution.optimal:
            raise InfeasibleError("relaxed OCP reported infeasible for this initial state")
    results["tightening"] = {
        "rho_state_min": float(controller.tightened_.rho_state.min()),
        "rho_input": controller.tightened_.rho_input,
    }
    results["ocp"] = {
        "status": solution.status,
        "objective": solution.objective_value,
        "residuals": solution.residuals,
    }

    n_trials = int(trials_override or cfg.get("validation", {}).get("n_trials", 10_000))
    with _stage("validate", timings):
        sampler = _validation_sampler(cfg)
        report = monte_carlo_validate(
            sys,
            controller.gain_,
            solution.v_star,
            solution.z_star,
            constraints,
            sampler,
            n_trials,
            seeds["validation"],
            region_error=controller.region_error_,
            keep_trajectories=100,
        )
    results["validation"] = {
        "n_trials": report.n_trials,
        "state_sat_rate": report.state_sat_rate,
        "input_sat_rate": report.input_sat_rate,
        "joint_rate": report.joint_rate,
        "pr_error_rate": report.pr_error_rate,
        "wilson_95": report.intervals,
    }
    manifest["results"] = results

    with _stage("write-output", timings):
        _write_solution_csv(out_dir, solution.z_star, solution.v_star)
        _write_region_csv(
            out_dir, constraints, controller.tightened_, controller.region_error_, controller.region_input_
        )
        if report.sample_states is not None:
            _write_samples_csv(out_dir, report.sample_states)
        _write_manifest(out_dir, manifest)
    _write_timings(out_dir, timings)
    return manifest


def run_baseline(
    cfg: dict, data_path, out_dir, scenarios: int | None = None, seed_override=None,
    trials_override=None, beta: float = 1e-3,
) -> dict:
    """run-baseline: scenario optimization on the first `scenarios` dataset sequences."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    seeds = resolve_seeds(cfg, seed_override)
    sys = build_system(cfg)
    constraints = build_constraints(cfg, sys)
    cost = build_cost(cfg)
    manifest = _common_manifest(cfg, "run-baseline", data_path, seeds)
    manifest["method"] = "scenario-baseline"

    with _stage("load-data", timings):
        sequences = _dataset_for_run(cfg, data_path)
    n_scenarios = int(scenarios or cfg.get("method", {}).get("baseline", {}).get("scenarios", 100))
    if n_scenarios < 1:
        raise ConfigError("need at least one scenario")
    if n_scenarios > sequences.shape[0]:
        raise ConfigError(
            f"requested {n_scenarios} scenarios but the dataset holds {sequences.shape[0]} sequences"
        )

    x0 = np.array(cfg["system"]["x0"], dtype=float)
    with _stage("build", timings):
        prog = build_scenario_program(sys, constraints, cost, x0, sequences[:n_scenarios])
    with _stage("solve", timings):
        solution = solve_scenario_program(prog)

    n_trials = int(trials_override or cfg.get("validation", {}).get("n_trials", 10_000))
    with _stage("validate", timings):
        sampler = _validation_sampler(cfg)
        fresh = _validate_scenario_solution(
            sys, constraints, prog, solution, sampler, n_trials, seeds["validation"]
        )

    manifest["results"] = {
        "n_scenarios": n_scenarios,
        "n_decision_vars": prog.n_decision_vars,
        "objective": solution.objective,
        "training_max_violation": solution.max_violation,
        "validation": fresh,
        "requirement_note": scenario_requirement_note(constraints.theta, beta, prog.n_decision_vars),
        "reference_scenario_count": REFERENCE_SCENARIO_COUNT,
    }
    with _stage("write-output", timings):
        _write_manifest(out_dir, manifest)
    _write_timings(out_dir, timings)
    return manifest


def _validate_scenario_solution(sys, constraints, prog, solution, sampler, n_trials, seed) -> dict:
    from .montecarlo import wilson_interval
    from .scenario import feedback_inputs_batch, simulate_with_feedback_batch

    children = np.random.SeedSequence(seed).spawn(n_trials)
    W = np.empty((n_trials, sys.N, sys.n))
    for i, child in enumerate(children):
        W[i] = sampler.sample(np.random.default_rng(child), sys.N)
    U = feedback_inputs_batch(solution.M, solution.v, W)
    X = simulate_with_feedback_batch(sys, prog.x0, solution.M, solution.v, W)
    ok_state = np.ones(n_trials, dtype=bool)
    for t, s in enumerate(constraints.state_sets):
        ok_state &= s.membership(X[:, t + 1]) <= 1.0
    Q = constraints.input_set.shape
    ok_input = np.einsum("sti,ij,stj->st", U, Q, U).max(axis=1) <= 1.0
    state_hits = int(ok_state.sum())
    input_hits = int(ok_input.sum())
    joint_hits = int((ok_state & ok_input).sum())
    return {
        "n_trials": n_trials,
        "state_sat_rate": state_hits / n_trials,
        "input_sat_rate": input_hits / n_trials,
        "joint_rate": joint_hits / n_trials,
        "wilson_95": {
            "state": wilson_interval(state_hits, n_trials),
            "input": wilson_interval(input_hits, n_trials),
            "joint": wilson_interval(joint_hits, n_trials),
        },
    }


# ---------------------------------------------------------------------------
# report

def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        with open(path) as handle:
            manifest = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"corrupt or missing manifest {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"manifest {path}: schema_version {manifest.get('schema_version')!r} "
            f"is not {SCHEMA_VERSION}"
        )
    return manifest


def _manifest_row(run_path, manifest: dict) -> dict:
    results = manifest.get("results", {})
    validation = results.get("validation", {})
    timing_path = Path(run_path)
    if timing_path.is_file():
        timing_path = timing_path.parent
    wall_clock = ""
    timings_file = timing_path / TIMINGS_NAME
    if timings_file.exists():
        with open(timings_file) as handle:
            wall_clock = f"{sum(json.load(handle).values()):.3f}"
    error_region = ""
    if "C_e" in results:
        error_region = f"C_e={results['C_e']:.4f}"
    if "Phi" in results:
        error_region = f"ellipsoid trace={results.get('trace_phi_hat', 0.0):.4f}"
    return {
        "run": str(run_path),
        "method": manifest.get("method", ""),
        "error_region": error_region,
        "input_radius": f"{results['C_Ke']:.4f}" if "C_Ke" in results else "",
        "objective": _fmt(results.get("objective", results.get("ocp", {}).get("objective"))),
        "state_rate": _fmt(validation.get("state_sat_rate")),
        "input_rate": _fmt(validation.get("input_sat_rate")),
        "joint_rate": _fmt(validation.get("joint_rate")),
        "wall_clock_s": wall_clock,
    }


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def write_report(run_paths, out_dir) -> Path:
    """Merge run manifests into comparison.csv and a fixed-width text table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [_manifest_row(p, load_manifest(p)) for p in run_paths]
    columns = [
        "run", "method", "error_region", "input_radius", "objective",
        "state_rate", "input_rate", "joint_rate", "wall_clock_s",
    ]
    csv_lines = [",".join(columns)]
    for row in rows:
        csv_lines.append(",".join(row[c] for c in columns))
    note = (
        f"note: a-priori scenario-optimization guarantees for this problem class "
        f"reference at least {REFERENCE_SCENARIO_COUNT} scenarios (literature figure, "
        f"recorded for comparison only)"
    )
    atomic_write_text(out_dir / "comparison.csv", "\n".join(csv_lines) + "\n")

    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in columns}
    text_lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    text_lines.append("  ".join("-" * widths[c] for c in columns))
    for row in rows:
        text_lines.append("  ".join(row[c].ljust(widths[c]) for c in columns))
    text_lines.append("")
    text_lines.append(note)
    atomic_write_text(out_dir / "comparison.txt", "\n".join(text_lines) + "\n")
    return out_dir / "comparison.csv"
