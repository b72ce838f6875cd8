"""Experiment runner.

Parses flat ``key = value`` configs (dotted section prefixes), validates them
exhaustively, orchestrates the computational modules, and emits
bit-reproducible CSV artifacts plus a manifest.  Results are cached in a
content-addressed store keyed by the resolved config (minus plumbing keys),
so re-runs with the same inputs are free and byte-identical.

Subcommands::

    anisofield run <config|preset|manifest.json> [--output DIR]
                   [--workers N] [--cache-dir DIR]
    anisofield describe <kind>
    anisofield presets

Exit codes: 0 success, 1 config validation error, 2 criterion failure
(verify-all), 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import calibrated_spec, second_moment
from .covering import covering_report
from .hitting import (GridTooCoarseError, HitExperiment, fit_modulus,
                      hit_rate, hitting_exponent_fit)
from .model import Box, Equation, ModelParams, space_time_box
from .oscillation import OscillationStudy, fit_k_tilde, oscillation_event_rate
from .spectral import SigmaSpec, SpectralKernelSpec, build_frequency_grid
from .synth import BandTruncationError, ensemble_values

ENV_CACHE_DIR = "ANISOFIELD_CACHE_DIR"
DEFAULT_CACHE_DIR = "~/.cache/anisofield"

KINDS = ("simulate", "quadrature", "oscillation", "covering", "hitting",
         "verify-all")


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Field:
    """One config key: value type, default, applicability, help text."""

    type: str                       # int | float | str | choice | floats |
                                    # ints | points | atoms
    default: object = None
    kinds: Optional[Tuple[str, ...]] = None   # None = every kind
    choices: Optional[Tuple[str, ...]] = None
    required: bool = False
    help: str = ""


SCHEMA: Dict[str, Field] = {
    "experiment": Field("choice", choices=KINDS, required=True,
                        help="experiment kind"),
    "model.equation": Field("choice", default="heat",
                            choices=("heat", "wave", "heat_sigma"),
                            help="kernel family"),
    "model.k": Field("int", default=1, help="spatial dimension (1 or 2)"),
    "model.beta": Field("float", default=1.0,
                        help="spectral exponent (heat: 0<beta<=min(2,k); "
                             "wave: 1<=beta<=min(2,k))"),
    "sigma.atoms": Field("atoms", default=None,
                         kinds=("simulate", "quadrature"),
                         help="trig-poly coefficient atoms "
                              "'re,im,r,z1[,z2]; ...' (heat_sigma only)"),
    "grid.resolution": Field("int", default=256,
                             help="frequency nodes per octave shell"),
    "grid.b_max": Field("float", default=64.0,
                        help="band cut for the sampling grid"),
    "seed": Field("int", default=0, help="master seed"),
    "replicas": Field("int", default=100, help="Monte Carlo replicas"),
    "workers": Field("int", default=1, help="worker pool size"),
    "output.dir": Field("str", default=None, help="output directory"),
    "cache.dir": Field("str", default=None,
                       help=f"cache directory (env {ENV_CACHE_DIR} wins)"),
    "points": Field("points", default="1,0; 1,0.5; 1.5,0.25; 2,1",
                    kinds=("simulate", "quadrature"),
                    help="space-time points 't,x1[,x2]; ...'"),
    "components": Field("int", default=1, kinds=("simulate",),
                        help="independent field components"),
    "box.t_lo": Field("float", default=1.0,
                      kinds=("hitting",), help="time interval start"),
    "box.t_hi": Field("float", default=1.4,
                      kinds=("hitting",), help="time interval end"),
    "box.x_lo": Field("float", default=0.0,
                      kinds=("hitting",), help="space interval start"),
    "box.x_hi": Field("float", default=1.0,
                      kinds=("hitting",), help="space interval end"),
    "oscillation.x0": Field("floats", default="1,0",
                            kinds=("oscillation",), help="ladder center"),
    "oscillation.r0": Field("float", default=0.0625,
                            kinds=("oscillation",),
                            help="top ladder radius (ladder spans [r0^U, r0])"),
    "oscillation.u": Field("float", default=2.0, kinds=("oscillation",),
                           help="ladder depth exponent"),
    "oscillation.k_tilde": Field("float", default=None,
                                 kinds=("oscillation",),
                                 help="threshold constant; fitted if absent"),
    "covering.p": Field("ints", default="3,4,5", kinds=("covering",),
                        help="dyadic orders"),
    "covering.d": Field("int", default=6, kinds=("covering",),
                        help="field components"),
    "covering.center": Field("floats", default="1,0", kinds=("covering",),
                             help="ball center (snapped to the lattice)"),
    "covering.k3_tilde": Field("float", default=0.07, kinds=("covering",),
                               help="good-cube threshold constant"),
    "covering.k4": Field("float", default=1.0, kinds=("covering",),
                         help="bad-cube refinement constant"),
    "hitting.d": Field("int", default=8, kinds=("hitting",),
                       help="field components"),
    "hitting.z": Field("floats", default=None, kinds=("hitting",),
                       help="target point (default: origin)"),
    "hitting.eps": Field("floats",
                         default="0.6,0.49,0.4,0.33,0.27,0.22",
                         kinds=("hitting",), help="target radii, decreasing"),
    "hitting.coarse_scale": Field("float", default=0.35, kinds=("hitting",),
                                  help="metric scale of the coarse tiling"),
    "hitting.kappa": Field("float", default=3.5, kinds=("hitting",),
                           help="pruning quantile multiplier"),
    "verify.criteria": Field("ints", default="1,2,3,4,5,6,7,8,9,10,11",
                             kinds=("verify-all",),
                             help="criterion numbers to run"),
    "verify.scale": Field("choice", default="smoke",
                          choices=("smoke", "full"), kinds=("verify-all",),
                          help="replica scale (smoke: reduced counts)"),
}

# plumbing keys excluded from the cache identity
NON_SEMANTIC = ("output.dir", "cache.dir", "workers")


class ConfigError(Exception):
    """Carries every validation violation, not just the first."""

    def __init__(self, errors: Sequence[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def parse_config_text(text: str) -> Tuple[Dict[str, str], List[str]]:
    raw: Dict[str, str] = {}
    errors: List[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got "
                          f"{stripped!r}")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            errors.append(f"line {lineno}: empty key")
            continue
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        raw[key] = value
    return raw, errors


def _convert(key: str, spec: Field, value: str, errors: List[str]):
    try:
        if spec.type == "int":
            return int(value)
        if spec.type == "float":
            out = float(value)
            if not math.isfinite(out):
                raise ValueError("must be finite")
            return out
        if spec.type == "str":
            return value
        if spec.type == "choice":
            if value not in spec.choices:
                raise ValueError(f"must be one of {', '.join(spec.choices)}")
            return value
        if spec.type == "floats":
            return tuple(float(v) for v in value.split(","))
        if spec.type == "ints":
            return tuple(int(v) for v in value.split(","))
        if spec.type == "points":
            pts = []
            for chunk in value.split(";"):
                chunk = chunk.strip()
                if chunk:
                    pts.append(tuple(float(v) for v in chunk.split(",")))
            if not pts:
                raise ValueError("needs at least one point")
            return tuple(pts)
        if spec.type == "atoms":
            atoms = []
            for chunk in value.split(";"):
                parts = [float(v) for v in chunk.strip().split(",")]
                if len(parts) < 4:
                    raise ValueError("each atom needs re,im,r,z1[,z2]")
                atoms.append((complex(parts[0], parts[1]), parts[2],
                              tuple(parts[3:])))
            return tuple(atoms)
        raise AssertionError(spec.type)
    except ValueError as exc:
        errors.append(f"{key}: invalid value {value!r} ({exc})")
        return None


def resolve_config(raw: Dict[str, str]) -> Tuple[Dict[str, object], List[str]]:
    """Typed, defaulted config plus the exhaustive violation list."""
    errors: List[str] = []
    for key in sorted(raw):
        if key not in SCHEMA:
            errors.append(f"unknown key {key!r}")
    kind = raw.get("experiment")
    if kind is None:
        errors.append("missing required key 'experiment'")
    elif kind not in KINDS:
        errors.append(f"experiment: must be one of {', '.join(KINDS)}")
        kind = None
    resolved: Dict[str, object] = {}
    for key, spec in SCHEMA.items():
        applicable = spec.kinds is None or kind is None or kind in spec.kinds
        if key in raw:
            if not applicable:
                errors.append(f"{key}: not applicable to experiment "
                              f"{kind!r}")
                continue
            value = _convert(key, spec, raw[key], errors)
            if value is not None:
                resolved[key] = value
        elif applicable and spec.default is not None:
            value = _convert(key, spec, str(spec.default), [])
            resolved[key] = value
    _validate_semantics(resolved, errors)
    return resolved, errors


def _validate_semantics(cfg: Dict[str, object], errors: List[str]) -> None:
    kind = cfg.get("experiment")
    # model constraints come from the domain types themselves
    if "model.equation" in cfg:
        try:
            _model_params(cfg)
        except (ValueError, TypeError) as exc:
            errors.append(f"model: {exc}")
    if cfg.get("grid.resolution") is not None and cfg["grid.resolution"] < 64:
        errors.append("grid.resolution: must be >= 64 (nodes per octave)")
    if cfg.get("grid.b_max") is not None and cfg["grid.b_max"] < 2.0:
        errors.append("grid.b_max: must be >= 2")
    if cfg.get("replicas") is not None and cfg["replicas"] < 1:
        errors.append("replicas: must be >= 1")
    if cfg.get("workers") is not None and cfg["workers"] < 1:
        errors.append("workers: must be >= 1")
    if cfg.get("components") is not None and cfg["components"] < 1:
        errors.append("components: must be >= 1")
    if kind in ("simulate", "quadrature") and "points" in cfg:
        k = cfg.get("model.k", 1)
        for i, p in enumerate(cfg["points"]):
            if len(p) != 1 + k:
                errors.append(f"points[{i}]: needs 1+k={1 + k} coordinates, "
                              f"got {len(p)}")
            elif p[0] <= 0:
                errors.append(f"points[{i}]: time must be positive")
    if kind == "oscillation":
        r0 = cfg.get("oscillation.r0")
        if r0 is not None and not 0 < r0 < 0.2:
            errors.append("oscillation.r0: must lie in (0, 0.2) so "
                          "loglog(1/r) is defined on the ladder")
    if kind == "hitting":
        eps = cfg.get("hitting.eps", ())
        if any(e <= 0 for e in eps) or list(eps) != sorted(eps, reverse=True):
            errors.append("hitting.eps: must be positive and strictly "
                          "decreasing")
        if cfg.get("box.t_lo", 1.0) <= 0:
            errors.append("box.t_lo: must be positive")
        if cfg.get("box.t_hi", 0.0) <= cfg.get("box.t_lo", 1.0):
            errors.append("box.t_hi: must exceed box.t_lo")
        z = cfg.get("hitting.z")
        if z is not None and len(z) != cfg.get("hitting.d", 8):
            errors.append("hitting.z: length must equal hitting.d")
    if kind == "verify-all":
        for c in cfg.get("verify.criteria", ()):
            if not 1 <= c <= 11:
                errors.append(f"verify.criteria: unknown criterion {c}")


def _model_params(cfg: Dict[str, object]) -> ModelParams:
    return ModelParams(Equation(cfg["model.equation"]), k=cfg["model.k"],
                       beta=cfg["model.beta"])


def _build_spec(cfg: Dict[str, object]) -> SpectralKernelSpec:
    params = _model_params(cfg)
    sigma = None
    if params.equation is Equation.HEAT_SIGMA:
        atoms = cfg.get("sigma.atoms")
        if atoms is None:
            raise ConfigError(["sigma.atoms: required when model.equation "
                               "is heat_sigma"])
        sigma = SigmaSpec(atoms=atoms)
    return calibrated_spec(params, sigma)


# ---------------------------------------------------------------------------
# CSV / manifest plumbing
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def csv_bytes(header: Sequence[str], rows: Sequence[Sequence[object]]) -> bytes:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return ("\n".join(lines) + "\n").encode("ascii")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def semantic_config(cfg: Dict[str, object]) -> Dict[str, object]:
    out = {}
    for key, value in cfg.items():
        if key in NON_SEMANTIC:
            continue
        if key == "sigma.atoms" and value is not None:
            # flat [re, im, r, z...] per atom, matching the config text form
            out[key] = [[c.real, c.imag, r, *z] for c, r, z in value]
            continue
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else
                     ([v.real, v.imag] if isinstance(v, complex) else v)
                     for v in value]
        out[key] = value
    return out


def cache_key(cfg: Dict[str, object]) -> str:
    blob = json.dumps(semantic_config(cfg), sort_keys=True,
                      separators=(",", ":"), default=repr)
    return _sha256(blob.encode())


@dataclass
class RunResult:
    files: Dict[str, bytes]
    stdout: List[str] = field(default_factory=list)
    exit_code: int = 0


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _grid_for(cfg, spec):
    return build_frequency_grid(spec, spec.profile, cfg["grid.resolution"],
                                cfg["grid.b_max"])


def _run_simulate(cfg: Dict[str, object], workers: int) -> RunResult:
    spec = _build_spec(cfg)
    grid = _grid_for(cfg, spec)
    points = cfg["points"]
    d = cfg["components"]
    replicas = cfg["replicas"]
    block = 16
    starts = list(range(0, replicas, block))

    def one(start: int) -> np.ndarray:
        n = min(block, replicas - start)
        return ensemble_values(spec, grid, points, d=d, seed=cfg["seed"],
                               replicas=n, replica_offset=start)[:, 0]

    # fixed replica blocks; assembly in block order makes the result
    # independent of the worker count
    with ThreadPoolExecutor(max_workers=workers) as pool:
        vals = np.concatenate(list(pool.map(one, starts)), axis=0)
    k = spec.params.k
    header = ["replica", "point", "t"] + [f"x{j + 1}" for j in range(k)] + \
        ["component", "value"]
    rows = []
    for rep in range(replicas):
        for i, p in enumerate(points):
            for c in range(d):
                rows.append([rep, i, *p, c, vals[rep, i, c]])
    return RunResult({"values.csv": csv_bytes(header, rows)})


def _run_quadrature(cfg: Dict[str, object], workers: int) -> RunResult:
    spec = _build_spec(cfg)
    points = cfg["points"]
    header = ["i", "j", "value", "abs_error", "converged"]
    rows = []
    converged = True
    for i, p in enumerate(points):
        for j in range(i, len(points)):
            res = second_moment(spec, p, points[j])
            converged &= res.converged
            rows.append([i, j, res.value, res.error, res.converged])
    result = RunResult({"moments.csv": csv_bytes(header, rows)})
    if not converged:
        result.stdout.append("quadrature failed to converge on some pairs")
        result.exit_code = 3
    return result


def _run_oscillation(cfg: Dict[str, object], workers: int) -> RunResult:
    spec = _build_spec(cfg)
    grid = _grid_for(cfg, spec)
    study = OscillationStudy(spec, grid, cfg["oscillation.x0"],
                             cfg["oscillation.r0"], U=cfg["oscillation.u"],
                             replicas=cfg["replicas"], seed=cfg["seed"])
    k_tilde = cfg.get("oscillation.k_tilde")
    fit = fit_k_tilde(study)
    if k_tilde is None:
        k_tilde = fit["k_tilde"]
    if k_tilde is None:
        return RunResult({}, ["no threshold constant reached the target "
                              "frequency"], 3)
    est = oscillation_event_rate(spec, grid, cfg["oscillation.x0"],
                                 cfg["oscillation.r0"], k_tilde, study=study)
    scan_rows = [[k, f] for k, f in fit["scan"]]
    summary = [[cfg["oscillation.r0"], k_tilde, est.estimate, est.stderr,
                fit["target_frequency"], est.replicas, est.seed]]
    return RunResult({
        "oscillation_scan.csv": csv_bytes(["k_tilde", "frequency"], scan_rows),
        "oscillation.csv": csv_bytes(
            ["r0", "k_tilde", "frequency", "stderr", "target_frequency",
             "replicas", "seed"], summary),
    })


def _run_covering(cfg: Dict[str, object], workers: int) -> RunResult:
    spec = _build_spec(cfg)
    grid = _grid_for(cfg, spec)
    report = covering_report(spec, grid, cfg["covering.p"],
                             cfg["covering.center"], cfg["covering.k3_tilde"],
                             cfg["covering.k4"], d=cfg["covering.d"],
                             replicas=cfg["replicas"], seed=cfg["seed"])
    header = ["p", "replica", "audit_passed", "f_over_lambda", "rd_sum",
              "n_members", "n_h2", "hull_cells"]
    rows = [[r[h] for h in header] for r in report["rows"]]
    return RunResult({"covering.csv": csv_bytes(header, rows)})


def _run_hitting(cfg: Dict[str, object], workers: int) -> RunResult:
    spec = _build_spec(cfg)
    grid = _grid_for(cfg, spec)
    d = cfg["hitting.d"]
    z = cfg.get("hitting.z") or (0.0,) * d
    box = space_time_box(cfg["box.t_lo"], cfg["box.t_hi"],
                         [(cfg["box.x_lo"], cfg["box.x_hi"])])
    experiment = HitExperiment(z=tuple(z), epsilons=tuple(cfg["hitting.eps"]),
                               box=box, coarse_scale=cfg["hitting.coarse_scale"],
                               replicas=cfg["replicas"], seed=cfg["seed"],
                               d=d, kappa=cfg["hitting.kappa"])
    modulus = fit_modulus(spec, grid, box, seed=cfg["seed"] + 1)
    report = hit_rate(spec, grid, experiment, modulus=modulus)
    header = ["d", "eps", "estimate", "stderr", "replicas", "seed"]
    rows = [[r[h] for h in header] for r in report.rows()]
    files = {"hitting.csv": csv_bytes(header, rows)}
    stdout = []
    try:
        fit = hitting_exponent_fit([e for e in experiment.epsilons],
                                   report.estimates)
        files["hitting_fit.csv"] = csv_bytes(
            ["slope", "ci_lo", "ci_hi", "r_squared", "n_points"],
            [[fit.slope, fit.ci_lo, fit.ci_hi, fit.r_squared, fit.n_points]])
        stdout.append(f"fitted hitting exponent {fit.slope:.3f} "
                      f"[{fit.ci_lo:.3f}, {fit.ci_hi:.3f}]")
    except ValueError as exc:
        stdout.append(f"no exponent fit: {exc}")
    return RunResult(files, stdout)


def _run_verify_all(cfg: Dict[str, object], workers: int) -> RunResult:
    from . import acceptance
    results = acceptance.run_criteria(cfg["verify.criteria"],
                                      scale=cfg["verify.scale"],
                                      workers=workers)
    header = ["criterion", "name", "passed", "detail"]
    rows = []
    stdout = []
    failed = False
    for res in results:
        rows.append([res.index, res.name, res.passed, res.detail])
        stdout.append(f"criterion {res.index:2d} ({res.name}): "
                      f"{'PASS' if res.passed else 'FAIL'} -- {res.detail}")
        failed |= not res.passed
    return RunResult({"criteria.csv": csv_bytes(header, rows)}, stdout,
                     2 if failed else 0)


RUNNERS = {
    "simulate": _run_simulate,
    "quadrature": _run_quadrature,
    "oscillation": _run_oscillation,
    "covering": _run_covering,
    "hitting": _run_hitting,
    "verify-all": _run_verify_all,
}


# ---------------------------------------------------------------------------
# cache + orchestration
# ---------------------------------------------------------------------------


def _cache_dir(cfg: Dict[str, object], override: Optional[str]) -> Path:
    if override:
        return Path(override).expanduser()
    env = os.environ.get(ENV_CACHE_DIR)
    if env:
        return Path(env).expanduser()
    if cfg.get("cache.dir"):
        return Path(str(cfg["cache.dir"])).expanduser()
    return Path(DEFAULT_CACHE_DIR).expanduser()


def _load_cache(entry: Path) -> Optional[RunResult]:
    """Verified cache read; any corruption invalidates the entry."""
    meta_path = entry / "entry.json"
    if not meta_path.is_file():
        return None
    try:
        meta = json.loads(meta_path.read_text())
        files = {}
        for name, digest in meta["files"].items():
            data = (entry / name).read_bytes()
            if _sha256(data) != digest:
                raise ValueError(f"content hash mismatch for {name}")
            files[name] = data
        return RunResult(files, list(meta["stdout"]), int(meta["exit_code"]))
    except (OSError, ValueError, KeyError) as exc:
        print(f"warning: cache entry corrupt ({exc}); recomputing",
              file=sys.stderr)
        shutil.rmtree(entry, ignore_errors=True)
        return None


def _store_cache(entry: Path, result: RunResult) -> None:
    entry.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=entry.parent))
    try:
        for name, data in result.files.items():
            (tmp / name).write_bytes(data)
        meta = {
            "files": {n: _sha256(d) for n, d in result.files.items()},
            "stdout": result.stdout,
            "exit_code": result.exit_code,
        }
        (tmp / "entry.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n")
        os.replace(tmp, entry)
    except OSError:
        shutil.rmtree(tmp, ignore_errors=True)
        if not entry.exists():
            raise


def execute(cfg: Dict[str, object], output_dir: Path, workers: int,
            cache_override: Optional[str] = None) -> int:
    kind = cfg["experiment"]
    key = cache_key(cfg)
    entry = _cache_dir(cfg, cache_override) / key
    result = _load_cache(entry)
    cached = result is not None
    if result is None:
        try:
            result = RUNNERS[kind](cfg, workers)
        except (BandTruncationError, GridTooCoarseError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        _store_cache(entry, result)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "experiment": kind,
        "cache_key": key,
        "resolved_config": semantic_config(cfg),
        "files": {n: _sha256(d) for n, d in sorted(result.files.items())},
    }
    for name, data in result.files.items():
        (output_dir / name).write_bytes(data)
    (output_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2, default=repr) + "\n")
    for line in result.stdout:
        print(line)
    print(f"{'cache hit' if cached else 'computed'}: {len(result.files)} "
          f"file(s) in {output_dir}")
    return result.exit_code


# ---------------------------------------------------------------------------
# presets / describe
# ---------------------------------------------------------------------------


PRESETS: Dict[str, str] = {
    "heat-k1-beta1": """\
experiment = simulate
model.equation = heat
model.k = 1
model.beta = 1.0
grid.resolution = 128
grid.b_max = 32
replicas = 64
components = 2
points = 1,0; 1,0.5; 1.5,0.25; 2,1
""",
    "heat-k2-beta1.5": """\
experiment = simulate
model.equation = heat
model.k = 2
model.beta = 1.5
grid.resolution = 128
grid.b_max = 16
replicas = 64
components = 2
points = 1,0,0; 1,0.5,0.25; 1.5,0.25,0.5; 2,1,1
""",
    "wave-k1-beta1": """\
experiment = simulate
model.equation = wave
model.k = 1
model.beta = 1.0
grid.resolution = 128
grid.b_max = 32
replicas = 64
components = 2
points = 1,0; 1,0.5; 1.5,0.25; 2,1
""",
    "wave-k2-beta1.5": """\
experiment = simulate
model.equation = wave
model.k = 2
model.beta = 1.5
grid.resolution = 128
grid.b_max = 16
replicas = 64
components = 2
points = 1,0,0; 1,0.5,0.25; 1.5,0.25,0.5; 2,1,1
""",
    "heat-sigma": """\
experiment = simulate
model.equation = heat_sigma
model.k = 1
model.beta = 1.0
sigma.atoms = 1.5,0,0,0; 0.5,0,1,2; 0.5,0,-1,-2
grid.resolution = 128
grid.b_max = 32
replicas = 64
components = 2
points = 1,0; 1,0.5; 1.5,0.25; 2,1
""",
}


DESCRIPTIONS: Dict[str, str] = {
    "simulate": """\
simulate: draw field replicas via the harmonizable spectral representation
and emit every sampled value.

The field is synthesized as a weighted sum of complex-exponential nodes on a
per-octave frequency grid; Gaussian weights come from a counter-based RNG, so
replicas are reproducible and order-independent.
""",
    "quadrature": """\
quadrature: evaluate exact second moments E[v(p) v(q)] for every pair of the
configured points by adaptive quadrature of the spectral density, with
accumulated absolute-error estimates.  Non-convergence exits with code 3.
""",
    "oscillation": """\
oscillation: small-oscillation ladder experiment at a center point x0.  Over
the radius ladder r_l = r0^(l) spanning [r0^U, r0], measure the frequency of
the event that some radius has

    sup over the Delta-ball of radius r_l of |v(y) - v(x0)|
        <= K_tilde * r_l / (loglog(1/r_l))^(1/Q)

and fit the smallest K_tilde reaching the target frequency
1 - exp(-sqrt(log 1/r0)).
""",
    "covering": """\
covering: random-cover construction on a small ball around a lattice-centered
point, for a d-component field.  Cubes of dyadic order p are classified as
good when the anchored-projection oscillation is below the threshold
K3_tilde * 2^(-p) * (p log 2)^(-1/Q) (times the local scale ladder);
good cubes enter the cover whole, bad cubes are refined to order 2p.
Reports, per replica and p: the exact cell-count volume audit, the normalized
sum of f(r_A) = r_A^d * loglog(1/r_A), and the sum of r_A^d.
""",
    "hitting": """\
hitting: estimate P{ inf over the box of |v(t,x) - z| <= eps } for a ladder of
radii eps, for a d-component field.  Uses a coarse tiling plus adaptive
refinement with a fitted two-regime modulus bound; cells that provably cannot
reach any undecided radius are pruned.  When enough frequencies are away from
0 and 1, fits log-frequency against log-eps and reports the slope with a
bootstrap confidence interval (target d - Q for supercritical d).
""",
    "verify-all": """\
verify-all: run the acceptance criteria (calibration closure, variance
scaling, band inequalities, metric equivalence, covariance smoothness,
MC/quadrature agreement, oscillation event, small ball, covering, hitting
exponents, determinism) and emit one PASS/FAIL line per criterion.
Any failure exits with code 2.
verify.scale = smoke runs reduced replica counts; full runs the complete
acceptance scale.
""",
}


def _describe(kind: str) -> int:
    if kind not in KINDS:
        print(f"error: unknown experiment kind {kind!r}; known kinds: "
              f"{', '.join(KINDS)}", file=sys.stderr)
        return 1
    print(DESCRIPTIONS[kind])
    print("parameters and defaults:")
    for key, spec in SCHEMA.items():
        if spec.kinds is not None and kind not in spec.kinds:
            continue
        default = "(required)" if spec.required else f"default {spec.default}"
        print(f"  {key:24s} {spec.type:8s} {default:20s} {spec.help}")
    return 0


def _load_config_source(source: str) -> Tuple[Dict[str, str], List[str]]:
    if source in PRESETS:
        return parse_config_text(PRESETS[source])
    path = Path(source)
    if not path.is_file():
        return {}, [f"config {source!r} is neither a readable file nor a "
                    f"preset name"]
    text = path.read_text()
    if text.lstrip().startswith("{"):
        # a manifest: re-run from its resolved config
        try:
            manifest = json.loads(text)
            cfg = manifest["resolved_config"]
        except (ValueError, KeyError) as exc:
            return {}, [f"manifest parse error: {exc}"]
        raw = {}
        for key, value in cfg.items():
            if isinstance(value, list):
                parts = []
                for v in value:
                    if isinstance(v, list):
                        parts.append(",".join(_fmt(u) for u in v))
                    else:
                        parts.append(_fmt(v))
                raw[key] = "; ".join(parts) if any(
                    isinstance(v, list) for v in value) else ",".join(parts)
            else:
                raw[key] = _fmt(value)
        return raw, []
    return parse_config_text(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="anisofield",
        description="anisotropic Gaussian field experiment runner")
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="config file, preset name, or manifest")
    p_run.add_argument("--output", "-o", help="output directory")
    p_run.add_argument("--workers", type=int, help="worker pool size")
    p_run.add_argument("--cache-dir", help="cache directory override")
    p_desc = sub.add_parser("describe", help="describe an experiment kind")
    p_desc.add_argument("kind")
    sub.add_parser("presets", help="list built-in configs")
    args = parser.parse_args(argv)

    if args.command == "presets":
        for name, text in PRESETS.items():
            print(f"[{name}]")
            print(text)
        return 0
    if args.command == "describe":
        return _describe(args.kind)
    if args.command != "run":
        parser.print_help()
        return 1

    raw, errors = _load_config_source(args.config)
    cfg: Dict[str, object] = {}
    if not errors:
        cfg, errors = resolve_config(raw)
    output = args.output or cfg.get("output.dir")
    if not errors and not output:
        errors = errors + ["output.dir: required (or pass --output)"]
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    workers = args.workers if args.workers else cfg.get("workers", 1)
    if workers < 1:
        print("config error: workers: must be >= 1", file=sys.stderr)
        return 1
    cfg["workers"] = workers
    return execute(cfg, Path(output), workers, args.cache_dir)


if __name__ == "__main__":
    sys.exit(main())
