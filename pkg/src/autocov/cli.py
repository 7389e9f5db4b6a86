"""Command-line driver: ``autocov <command> --config run.toml [flags]``.

Precedence for every setting: command-line flag, then the config file, then
the built-in default.  The worker count additionally falls back to the
``WORKERS`` environment variable before the default (the CPU count).

Exit codes: 0 success, 1 numerical failure, 2 configuration error,
3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import cdkernel, fixedpoint, girko, sampling, smallsv
from .linalg import ContractViolation, ConvergenceError, general_eigenvalues
from .models import ModelError, load_model, model_from_dict

log = logging.getLogger("autocov")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
MAX_GAMMA = 64.0
SCHEMA_HINT = "see the 'Model files' section of README.md for the model schema"


class ConfigError(Exception):
    pass


class MissingArtifact(Exception):
    pass


def fmt(x: float) -> str:
    return "%.17g" % x


# --- configuration -----------------------------------------------------------


DEFAULTS = {
    "seed": 0,
    "out": None,
    "workers": None,
    "n": None,
    "L": 1,
    "sampler": "circulant",
    "trials": 1,
    "z": [[0.5, 0.0]],
    "eta": [0.0, 1.0],
    "grid": "-1.5,1.5,-1.5,1.5,81,81",
    "tol": 1e-10,
    "quadrature": {"kind": "continuous", "nodes": None},
    "potential": {"mode": "deterministic", "y_min": girko.Y_MIN, "y_max": girko.Y_MAX, "y_nodes": girko.Y_NODES},
    "density": {"source": None},
    "cdkernel": {"n_list": [16, 32, 64, 128], "delta": None},
    "smallsv": {
        "t_grid": [0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0],
        "beta": 0.5,
        "k_grid": None,
        "c": 0.01,
        "distance_instances": 0,
        "eta_list": [],
    },
    "compare": {"det": None, "emp": None, "eta0": 1.0},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh), p.parent
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None


def _pair(v, name: str) -> complex:
    if isinstance(v, str):
        parts = v.split(",")
        if len(parts) != 2:
            raise ConfigError(f"{name} must be 're,im'")
        return complex(float(parts[0]), float(parts[1]))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    raise ConfigError(f"{name} must be a [re, im] pair")


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and command-line flags; validate."""
    raw, base = load_config(args.config)
    cfg = _merge(DEFAULTS, raw)
    for key in ("seed", "out", "grid"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "eta", None) is not None:
        cfg["eta"] = args.eta
    if args.workers is not None:
        cfg["workers"] = args.workers
    elif cfg["workers"] is None and os.environ.get("WORKERS"):
        cfg["workers"] = os.environ["WORKERS"]
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    try:
        cfg["workers"] = int(cfg["workers"])
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed and workers must be integers") from None
    if cfg["workers"] < 1 or cfg["seed"] < 0:
        raise ConfigError("workers must be >= 1 and seed >= 0")
    if cfg["out"] is None:
        cfg["out"] = f"runs/{args.command}"
    cfg["_base"] = str(base)
    return cfg


def build_model(cfg: dict):
    mdef = cfg.get("model")
    if mdef is None:
        raise ConfigError(f"config needs a [model] table; {SCHEMA_HINT}")
    try:
        if "file" in mdef:
            path = Path(mdef["file"])
            if not path.is_absolute():
                path = Path(cfg["_base"]) / path
            if not path.exists():
                raise ConfigError(f"model file {path} not found; {SCHEMA_HINT}")
            return load_model(path)
        return model_from_dict(mdef)
    except (ModelError, ContractViolation) as exc:
        raise ConfigError(f"invalid model: {exc}; {SCHEMA_HINT}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from None


def run_params(cfg: dict, model) -> tuple[int, int]:
    """Validated (n, L)."""
    n = cfg.get("n")
    if n is None:
        n = 2 * model.N
    n, L = int(n), int(cfg["L"])
    if n < 1 or model.N < 1:
        raise ConfigError("N and n must be >= 1")
    if not 0 < model.N / n <= MAX_GAMMA:
        raise ConfigError(f"N/n must lie in (0, {MAX_GAMMA}]")
    if not 0 <= L < n:
        raise ConfigError(f"lag L={L} must satisfy 0 <= L < n={n}")
    if int(cfg["trials"]) < 1:
        raise ConfigError("trials must be >= 1")
    if cfg["sampler"] not in ("exact", "circulant"):
        raise ConfigError("sampler must be 'exact' or 'circulant'")
    return n, L


def z_list(cfg: dict) -> list[complex]:
    zs = cfg["z"]
    if isinstance(zs, (str, int, float)) or (isinstance(zs, list) and len(zs) == 2 and all(isinstance(v, (int, float)) for v in zs)):
        zs = [zs]
    return [_pair(v, "z") for v in zs]


def grid_of(cfg: dict) -> girko.Grid:
    g = cfg["grid"]
    try:
        if isinstance(g, str):
            return girko.Grid.parse(g)
        if isinstance(g, dict):
            return girko.Grid(*(float(v) for v in g["box"]), int(g["nx"]), int(g["ny"]))
        return girko.Grid(*(float(v) for v in g[:4]), int(g[4]), int(g[5]))
    except (ContractViolation, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad grid: {exc}") from None


def quadrature_of(cfg: dict, n: int, L: int, q: int):
    qd = cfg["quadrature"]
    kind = qd.get("kind", "continuous")
    if kind == "discrete":
        return fixedpoint.Quadrature.discrete(n)
    if kind not in ("continuous", "exact"):
        raise ConfigError("quadrature.kind must be continuous, discrete or exact")
    if kind == "exact" or not qd.get("nodes"):
        return None  # exact contour integrals for white noise, default nodes otherwise
    return fixedpoint.Quadrature.continuous(int(qd["nodes"]))


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_echo(cfg), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, outputs: list[str], summary: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": _echo(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "outputs": sorted(outputs),
        "summary": summary or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


# --- commands ----------------------------------------------------------------


def cmd_simulate(cfg: dict) -> dict:
    model = build_model(cfg)
    n, L = run_params(cfg, model)
    out = _outdir(cfg)
    zs = z_list(cfg)
    trials = int(cfg["trials"])
    outputs = []
    (out / "samples").mkdir(exist_ok=True)
    spectra = []
    atoms = {j: [] for j in range(len(zs))}
    for i in range(trials):
        b = sampling.sample(model, n, cfg["seed"], cfg["sampler"], stream=i)
        name = f"samples/sample_{i:04d}.bin"
        sampling.dump_block(b, out / name)
        outputs.append(name)
        R = sampling.empirical_autocov(b, L, check=True)
        for lam in general_eigenvalues(R):
            spectra.append((i, lam))
        for j, z in enumerate(zs):
            nu = girko.empirical_nu(b, L, z)
            atoms[j].extend((i, a, w) for a, w in zip(nu.atoms, nu.weights))
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "re", "im"])
        for i, lam in spectra:
            w.writerow([i, fmt(lam.real), fmt(lam.imag)])
    outputs.append("spectrum.csv")
    for j, z in enumerate(zs):
        name = f"atoms_z{j}.csv"
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "z_re", "z_im", "atom", "weight"])
            for i, a, wt in atoms[j]:
                w.writerow([i, fmt(z.real), fmt(z.imag), fmt(a), fmt(wt)])
        outputs.append(name)
    write_manifest(out, "simulate", cfg, outputs, {"N": model.N, "n": n, "L": L, "trials": trials})
    return {"outputs": outputs}


def cmd_solve(cfg: dict) -> dict:
    model = build_model(cfg)
    n, L = run_params(cfg, model)
    out = _outdir(cfg)
    quad = quadrature_of(cfg, n, L, model.order)
    etas = cfg["eta"]
    if isinstance(etas, str) or (len(etas) == 2 and all(isinstance(v, (int, float)) for v in etas)):
        etas = [etas]
    etas = [_pair(e, "eta") for e in etas]
    if any(e.imag == 0 for e in etas):
        raise ConfigError("eta must have a nonzero imaginary part")
    records = []
    for z in z_list(cfg):
        for e in etas:
            st = fixedpoint.solve_G(model, z, e, L, n, tol=float(cfg["tol"]), quad=quad)
            rec = st.to_record()
            rec["large_eta_check"] = abs(-e * fixedpoint.stieltjes_trace(st) - 1) if e.imag >= 100 else None  # -i t g(i t) -> 1
            records.append(rec)
    (out / "solve.json").write_text(json.dumps(records, indent=2))
    with open(out / "solve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_re", "z_im", "eta_re", "eta_im", "g_re", "g_im", "residual", "iterations"])
        for r in records:
            w.writerow([fmt(r["z"][0]), fmt(r["z"][1]), fmt(r["eta"][0]), fmt(r["eta"][1]),
                        fmt(r["trace_g"][0]), fmt(r["trace_g"][1]), fmt(r["residual"]), r["iterations"]])
    write_manifest(out, "solve", cfg, ["solve.json", "solve.csv"], {"solves": len(records)})
    return {"records": records}


def _potential_fields(cfg: dict, model, n: int, L: int, grid: girko.Grid, mode: str) -> dict:
    p = cfg["potential"]
    fields = {}
    if mode in ("deterministic", "both"):
        quad = quadrature_of(cfg, n, L, model.order)
        fld = girko.potential_field_deterministic(
            model, L, n, grid, float(p["y_min"]), float(p["y_max"]), int(p["y_nodes"]), quad
        )
        if not fld.valid.all():
            raise ConvergenceError(f"deterministic solve stalled at {int((~fld.valid).sum())} grid nodes")
        fields["det"] = fld
    if mode in ("empirical", "both"):
        blocks = [sampling.sample(model, n, cfg["seed"], cfg["sampler"], stream=i) for i in range(int(cfg["trials"]))]
        fields["emp"] = girko.potential_field_empirical(blocks, L, grid)
    if not fields:
        raise ConfigError("potential.mode must be deterministic, empirical or both")
    return fields


def cmd_potential(cfg: dict) -> dict:
    model = build_model(cfg)
    n, L = run_params(cfg, model)
    out = _outdir(cfg)
    grid = grid_of(cfg)
    fields = _potential_fields(cfg, model, n, L, grid, cfg["potential"]["mode"])
    outputs = []
    for tag, fld in fields.items():
        name = f"potential_{tag}.csv"
        girko.write_field(fld, out / name)
        outputs += [name, f"potential_{tag}.json"]
    write_manifest(out, "potential", cfg, outputs)
    return {"fields": fields}


def cmd_density(cfg: dict) -> dict:
    out = _outdir(cfg)
    src = cfg["density"].get("source")
    if src == "circular_law":
        fld = girko.circular_law_field(grid_of(cfg))
    elif src:
        path = Path(src)
        if not path.is_absolute():
            path = Path(cfg["_base"]) / path
        if not path.exists() or not path.with_suffix(".json").exists():
            raise MissingArtifact(f"potential field {path} (and its .json sidecar) not found")
        fld = girko.read_field(path)
    else:
        model = build_model(cfg)
        n, L = run_params(cfg, model)
        fld = _potential_fields(cfg, model, n, L, grid_of(cfg), "deterministic")["det"]
    fld = girko.density_from_potential(fld)
    summary = dict(fld.diagnostics)
    if src == "circular_law":
        summary["sup_interior_error"] = girko.circular_law_error(fld)
    girko.write_field(fld, out / "density.csv")
    write_manifest(out, "density", cfg, ["density.csv", "density.json"], summary)
    return {"field": fld, "summary": summary}


def cmd_cdkernel(cfg: dict) -> dict:
    model = build_model(cfg)
    out = _outdir(cfg)
    c = cfg["cdkernel"]
    delta = c.get("delta")
    try:
        reports = cdkernel.cd_convergence_report(model, c["n_list"], None if delta is None else float(delta))
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    outputs = []
    for r in reports:
        name = f"cd_n{r.n}.csv"
        cdkernel.write_cd_csv(r, out / name)
        outputs.append(name)
    summary = {"series": [r.to_dict() for r in reports]}
    (out / "cd_summary.json").write_text(json.dumps(summary, indent=2))
    outputs.append("cd_summary.json")
    write_manifest(out, "cdkernel", cfg, outputs, summary)
    return {"reports": reports}


def cmd_smallsv(cfg: dict) -> dict:
    model = build_model(cfg)
    n, L = run_params(cfg, model)
    out = _outdir(cfg)
    s = cfg["smallsv"]
    z = z_list(cfg)[0]
    trials = int(cfg["trials"])
    ecfg = smallsv.ExperimentConfig(model, n, L, z, trials, cfg["seed"], cfg["sampler"])
    outputs, summary = [], {}
    if trials >= 100 and z != 0:
        sv = smallsv.trial_singular_values(ecfg, cfg["workers"])
        te = smallsv.tail_smallest(ecfg, s["t_grid"], svals=sv)
        te.write_csv(out / "tail_smallest.csv")
        ti = smallsv.tail_intermediate(ecfg, float(s["beta"]), s.get("k_grid"), c_report=float(s["c"]), svals=sv)
        ti.write_csv(out / "tail_intermediate.csv")
        outputs += ["tail_smallest.csv", "tail_intermediate.csv"]
        summary["tail_smallest"] = te.extra
        summary["tail_intermediate"] = {k: v for k, v in ti.extra.items() if k != "table"}
    if int(s["distance_instances"]) > 0:
        summary["distance"] = smallsv.distance_identity_check(ecfg, int(s["distance_instances"])).to_dict()
    for e in s.get("eta_list") or []:
        if trials < 200:
            raise ConfigError("the resolvent variance check needs trials >= 200")
        summary.setdefault("variance", []).append(smallsv.resolvent_variance_check(ecfg, None, _pair(e, "eta")).to_dict())
    (out / "smallsv_summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    outputs.append("smallsv_summary.json")
    write_manifest(out, "smallsv", cfg, outputs, summary)
    return summary


def stieltjes_gaps(cfg: dict) -> dict:
    """|g_emp(i eta0) - g_det(i eta0)| per configured z, g_emp averaged over trials."""
    model = build_model(cfg)
    n, L = run_params(cfg, model)
    eta = 1j * float(cfg["compare"]["eta0"])
    if eta.imag <= 0:
        raise ConfigError("compare.eta0 must be positive")
    quad = quadrature_of(cfg, n, L, model.order)
    blocks = [sampling.sample(model, n, cfg["seed"], cfg["sampler"], stream=i) for i in range(int(cfg["trials"]))]
    rows = []
    for z in z_list(cfg):
        g_emp = np.mean([girko.empirical_nu(b, L, z).stieltjes(eta) for b in blocks])
        g_det = fixedpoint.stieltjes_trace(fixedpoint.solve_G(model, z, eta, L, n, tol=float(cfg["tol"]), quad=quad))
        rows.append({"z": [z.real, z.imag], "g_emp": [g_emp.real, g_emp.imag], "g_det": [g_det.real, g_det.imag], "gap": float(abs(g_emp - g_det))})
    return {"eta0": eta.imag, "rows": rows}


def cmd_compare(cfg: dict) -> dict:
    out = _outdir(cfg)
    c = cfg["compare"]
    paths = {}
    for key in ("det", "emp"):
        if not c.get(key):
            raise ConfigError(f"compare.{key} must name a field CSV")
        p = Path(c[key])
        if not p.is_absolute():
            p = Path(cfg["_base"]) / p
        if not p.exists() or not p.with_suffix(".json").exists():
            raise MissingArtifact(f"field {p} (and its .json sidecar) not found")
        paths[key] = p
    det, emp = girko.read_field(paths["det"]), girko.read_field(paths["emp"])
    if det.density is None:
        det = girko.density_from_potential(det)
    if emp.density is None:
        emp = girko.density_from_potential(emp)
    gaps = stieltjes_gaps(cfg) if cfg.get("model") is not None else None
    try:
        report = girko.compare_fields(emp, det, gaps)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    (out / "compare.json").write_text(json.dumps(report, indent=2))
    write_manifest(out, "compare", cfg, ["compare.json"], report)
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "potential": cmd_potential,
    "density": cmd_density,
    "cdkernel": cmd_cdkernel,
    "smallsv": cmd_smallsv,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autocov", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"autocov {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__ or f"run the {name} experiment")
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes (overrides WORKERS)")
        p.add_argument("--grid", help='z-grid "x0,x1,y0,y1,nx,ny"')
        p.add_argument("--eta", help='spectral parameter "re,im"')
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConvergenceError, girko.AtomHit) as exc:
        residual = getattr(exc, "residual", float("nan"))
        print(f"numerical failure: {exc} (residual {residual:.3e})", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {cfg['out']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
