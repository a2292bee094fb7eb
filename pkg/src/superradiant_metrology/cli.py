"""Command-line front end.

Usage::

    srmetro {evolve,counting,estimate,sweep,regime,coupling} --config FILE.json
            [--out DIR] [--format {csv,json,both}] [--threads N] [--seed N]

Every subcommand validates its JSON config against the shipped schema
(``schemas/config.schema.json``), fills defaults, and writes the resolved
config next to its outputs.  Exit codes: 0 success (including a failed
regime check, which is a diagnosis), 2 validation error, 3 numerical
failure.  Errors are reported on stderr as a single JSON object.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from datetime import datetime, timezone
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .coupling import (
    CavityGeometry,
    LengthPerturbation,
    bind_x_to_model,
    coupling_sensitivity,
    coupling_strength,
)
from .dynamics import (
    PhysicalParameters,
    _jsonable,
    build_tavis_cummings,
    evolve,
    standard_observables,
)
from .estimation import (
    InsensitiveObservableError,
    StatisticsAtX,
    delta_x_closed_form,
    delta_x_from_statistics,
    params_sampler,
    scaling_sweep,
    superradiance_sampler,
)
from .hilbert import (
    DensityMatrix,
    DickeSpace,
    FockSpace,
    FullAtomSpace,
    dicke_state,
    fock_state,
    singlet_dark_ket,
    symmetric_embed,
    tensor_states,
)
from .integrators import IntegrationError, IntegratorConfig
from .superradiance import adiabatic_eliminate, counting_statistics, regime_check

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("evolve", "counting", "estimate", "sweep", "regime", "coupling")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(message)
        self.path = path


# --------------------------------------------------------------------------- #
#                         config validation / defaults                         #
# --------------------------------------------------------------------------- #

def load_schema(name: str = "config.schema.json") -> dict:
    text = resources.files("superradiant_metrology").joinpath("schemas", name).read_text("utf-8")
    return json.loads(text)


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _deref(schema: dict, root: dict) -> dict:
    while "$ref" in schema:
        ref = schema["$ref"]
        if not ref.startswith("#/$defs/"):
            break
        merged = dict(root["$defs"][ref[len("#/$defs/"):]])
        merged.update({k: v for k, v in schema.items() if k != "$ref"})
        schema = merged
    return schema


def _fill_defaults(instance, schema: dict, root: dict):
    schema = _deref(schema, root)
    if not isinstance(instance, dict):
        return instance
    props = schema.get("properties")
    if props is None and "oneOf" in schema:
        # pick the branch this instance validates against
        for branch in schema["oneOf"]:
            sub = {"$defs": root["$defs"], **branch}
            if jsonschema.Draft202012Validator(sub).is_valid(instance):
                return _fill_defaults(instance, branch, root)
        return instance
    for key, sub in (props or {}).items():
        sub_d = _deref(sub, root)
        if key not in instance and "default" in sub_d:
            instance[key] = copy.deepcopy(sub_d["default"])
        if key in instance:
            instance[key] = _fill_defaults(instance[key], sub, root)
    return instance


def _validation_path(err: jsonschema.ValidationError) -> tuple[str, str]:
    parts = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            return _json_path(parts + [missing[0]]), f"missing required key '{missing[0]}'"
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return _json_path(parts + [extra[0]]), f"unknown key '{extra[0]}'"
    return _json_path(parts), err.message


def resolve_config(subcommand: str, raw: dict) -> dict:
    """Validate ``raw`` for ``subcommand`` and return a default-filled deep copy.

    Resolving an already resolved config returns an equal dict.
    """
    root = load_schema()
    schema = {"$schema": root["$schema"], "$defs": root["$defs"],
              "$ref": f"#/$defs/{subcommand}"}
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        # oneOf failures hide the useful message in the sub-errors
        if err.validator == "oneOf" and err.context:
            deepest = max(err.context, key=lambda e: len(e.absolute_path))
            err = deepest
        path, msg = _validation_path(err)
        raise ConfigError(msg, path)
    return _fill_defaults(copy.deepcopy(raw), root["$defs"][subcommand], root)


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------- #
#                               builders                                      #
# --------------------------------------------------------------------------- #

def _two(value, path: str) -> int:
    try:
        f = Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {value!r}", path) from None
    if (2 * f).denominator != 1:
        raise ConfigError(f"{value!r} is not an integer or half-integer", path)
    return int(2 * f)


def _params(cfg: dict) -> PhysicalParameters:
    m = cfg["model"]
    return PhysicalParameters(g=m["g"], kappa=m["kappa"], gamma=m["gamma"], n_atoms=m["n_atoms"])


def _integrator(cfg: dict) -> IntegratorConfig:
    ic = cfg["integrator"]
    t_final = ic["t_final"]
    if ic["record_grid"] is not None:
        grid = tuple(sorted(ic["record_grid"]))
    elif t_final == 0:
        grid = (0.0,)
    else:
        grid = tuple(np.linspace(0.0, t_final, max(ic["n_points"], 2)))
    max_step = ic["max_step"] if ic["max_step"] is not None else math.inf
    try:
        return IntegratorConfig(t_final=t_final, method=ic["method"], abs_tol=ic["abs_tol"],
                                rel_tol=ic["rel_tol"], max_step=max_step, record_grid=grid)
    except ValueError as exc:
        raise ConfigError(str(exc), "$.integrator") from None


def atomic_descriptor(desc: dict, n_atoms: int) -> tuple[int, int, str | None]:
    """``(two_j, two_m, named)`` for an initial-state descriptor."""
    if "state" in desc:
        name = desc["state"]
        if name == "excited":
            return n_atoms, n_atoms, name
        if name == "ground":
            return n_atoms, -n_atoms, name
        # dark: lowest J ladder, lowest m; annihilated by J-
        tj = n_atoms % 2
        return tj, -tj, name
    tj = _two(desc["j"], "$.initial.atoms.j")
    tm = _two(desc["m"], "$.initial.atoms.m")
    if tj < 0 or tj > n_atoms or (n_atoms - tj) % 2:
        raise ConfigError(f"J={desc['j']} not allowed for N={n_atoms}", "$.initial.atoms.j")
    if abs(tm) > tj or (tj - tm) % 2:
        raise ConfigError(f"m={desc['m']} not allowed for J={desc['j']}", "$.initial.atoms.m")
    return tj, tm, None


def atomic_state(desc: dict, n_atoms: int, representation: str) -> DensityMatrix:
    tj, tm, name = atomic_descriptor(desc, n_atoms)
    if representation == "dicke":
        return dicke_state(DickeSpace(n_atoms, tj), tm)
    space = FullAtomSpace(n_atoms)
    if name == "dark":
        return DensityMatrix.from_ket(space, _dark_ket_full(space))
    if tj != n_atoms:
        raise ConfigError("the full representation supports J < N/2 only via state='dark'",
                          "$.initial.atoms")
    return symmetric_embed(dicke_state(DickeSpace(n_atoms), tm), space)


def _dark_ket_full(space: FullAtomSpace) -> np.ndarray:
    if space.n_atoms % 2 == 0:
        return singlet_dark_ket(space)
    # odd N: pair singlets on the first N-1 atoms, last atom in |g>
    inner = singlet_dark_ket(FullAtomSpace(space.n_atoms - 1))
    return np.kron(np.array([1.0, 0.0]), inner)


# --------------------------------------------------------------------------- #
#                              output helpers                                  #
# --------------------------------------------------------------------------- #

def run_metadata(subcommand: str, resolved: dict, regime, approximations, units=None,
                 threads: int = 1, seed=None) -> dict:
    return {
        "tool": "superradiant_metrology",
        "version": __version__,
        "subcommand": subcommand,
        "config_hash": config_hash(resolved),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "units": units or {"hbar": 1, "rates": "angular frequency, natural units",
                           "times": "inverse of the rate unit"},
        "regime": regime,
        "approximations": list(approximations),
        "threads": threads,
        "seed": seed,
    }


def _write(out_dir: Path, name: str, text: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _envelope(meta: dict, resolved: dict, result) -> str:
    return json.dumps(_jsonable({"metadata": meta, "resolved_config": resolved, "result": result}),
                      indent=2, sort_keys=True) + "\n"


def _emit(args, subcommand, resolved, meta, csv_text, result):
    out = Path(args.out)
    _write(out, f"{subcommand}.resolved_config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    if args.format in ("csv", "both") and csv_text is not None:
        _write(out, f"{subcommand}.csv", csv_text)
    if args.format in ("json", "both"):
        _write(out, f"{subcommand}.json", _envelope(meta, resolved, result))


def _regime_warning(report, stream=None):
    if not report.passed:
        print(json.dumps({"warning": "outside superradiant regime", "regime": report.to_dict()}),
              file=stream or sys.stderr)


# --------------------------------------------------------------------------- #
#                               subcommands                                   #
# --------------------------------------------------------------------------- #

def cmd_evolve(cfg: dict, args) -> int:
    params = _params(cfg)
    rep = cfg["representation"]
    n = params.n_atoms
    tj, _, _ = atomic_descriptor(cfg["initial"]["atoms"], n)
    try:
        model = build_tavis_cummings(params, cfg["n_max"], rep, cfg["collective_gamma"],
                                     two_j=tj if rep == "dicke" else None)
    except ValueError as exc:
        raise ConfigError(str(exc), "$.model") from None
    atoms = atomic_state(cfg["initial"]["atoms"], n, rep)
    rho0 = tensor_states(atoms, fock_state(FockSpace(cfg["n_max"]), 0))
    obs = standard_observables(model)
    obs = {k: obs[k] for k in cfg["observables"]}
    ts = evolve(model, rho0, _integrator(cfg), obs)
    report = regime_check(params, cfg["regime_threshold"])
    _regime_warning(report)
    approx = [model.metadata["approximation"]] if "approximation" in model.metadata else []
    meta = run_metadata("evolve", cfg, report.to_dict(), approx, threads=args.threads, seed=args.seed)
    ts.metadata = {**ts.metadata, "run": meta}
    _emit(args, "evolve", cfg, meta, ts.to_csv(), ts.to_dict())
    return EXIT_OK


def cmd_counting(cfg: dict, args) -> int:
    params = _params(cfg)
    tj, tm, _ = atomic_descriptor(cfg["initial"]["atoms"], params.n_atoms)
    try:
        reduced = adiabatic_eliminate(params, two_j=tj, approximate=cfg["approximate"])
    except ValueError as exc:
        raise ConfigError(str(exc), "$.model") from None
    rho0 = dicke_state(reduced.space, tm)
    stats = counting_statistics(reduced, rho0, _integrator(cfg))
    report = regime_check(params, cfg["regime_threshold"])
    _regime_warning(report)
    lind_meta = reduced.to_lindblad().metadata
    approx = [lind_meta["approximation"]] if "approximation" in lind_meta else []
    approx.append("adiabatic elimination of the cavity field (collective rate 2 g^2 / kappa)")
    meta = run_metadata("counting", cfg, report.to_dict(), approx, threads=args.threads, seed=args.seed)
    ts = stats.to_timeseries()
    ts.metadata = {**ts.metadata, "run": meta}
    _emit(args, "counting", cfg, meta, ts.to_csv(), ts.to_dict())
    return EXIT_OK


def _x2_family(x):
    return StatisticsAtX(x, x * x, 1.0)


def cmd_estimate(cfg: dict, args) -> int:
    mode = cfg["mode"]
    fd = cfg["fd"]
    regime = None
    units = None
    extra = {}
    if mode == "analytic_self_test":
        sampler = _x2_family
        x0 = 1.0 if cfg["x0"] is None else cfg["x0"]
    elif mode == "superradiance":
        n, kappa, t = cfg["n_atoms"], cfg["kappa"], cfg["t"]
        tj, tm, _ = atomic_descriptor(cfg["initial"]["atoms"], n)
        sampler = superradiance_sampler(n, kappa, t, two_m=tm, two_j=tj)
        x0 = cfg["x0"]
        if x0 is None:
            raise ConfigError("missing required key 'x0' (x = g t) for mode 'superradiance'", "$.x0")
        if not x0 > 0:
            raise ConfigError("x0 = g t must be positive in superradiance mode", "$.x0")
        g0 = x0 / t
        report = regime_check(PhysicalParameters(g0, kappa, 0.0, n), cfg["regime_threshold"])
        _regime_warning(report)
        regime = report.to_dict()
        extra["closed_form"] = {"delta_x": delta_x_closed_form(n, g0, t, cfg["M"]),
                                "g": g0, "t": t}
    else:
        for key in ("geometry", "kappa_si", "t_si"):
            if key not in cfg:
                raise ConfigError(f"missing required key '{key}' for mode 'length'", f"$.{key}")
        geo = cfg["geometry"]
        try:
            ref = CavityGeometry(length=geo["length"], atom_position=geo["atom_position"],
                                 transverse_area=geo["transverse_area"],
                                 dipole_projection=geo["dipole_projection"],
                                 mode_index=geo["mode_index"])
        except ValueError as exc:
            raise ConfigError(str(exc), "$.geometry") from None
        binding = bind_x_to_model(LengthPerturbation(0.0, ref, cfg["co_moving"]),
                                  PhysicalParameters(0.0, cfg["kappa_si"], 0.0, cfg["n_atoms"]))
        t_nat = binding.units.time_to_natural(cfg["t_si"])
        tj, tm, _ = atomic_descriptor(cfg["initial"]["atoms"], cfg["n_atoms"])
        if tj != cfg["n_atoms"]:
            raise ConfigError("length mode uses the maximal-J ladder", "$.initial.atoms")
        sampler = params_sampler(binding, t_nat, two_m=tm)
        x0 = 0.0 if cfg["x0"] is None else cfg["x0"]
        if not abs(x0) < 1:
            raise ConfigError("x0 = dL/L must satisfy |x0| < 1", "$.x0")
        report = regime_check(binding(x0), cfg["regime_threshold"])
        _regime_warning(report)
        regime = report.to_dict()
        units = binding.metadata()
        extra["t_natural"] = t_nat
    res = delta_x_from_statistics(sampler, x0, cfg["M"], fd["step"], fd["richardson_levels"])
    result = {**res.to_dict(), **extra}
    if "closed_form" in extra:
        result["closed_form"]["ratio_numeric_to_closed_form"] = res.delta_x / extra["closed_form"]["delta_x"]
    meta = run_metadata("estimate", cfg, regime, [], units=units, threads=args.threads, seed=args.seed)
    _emit(args, "estimate", cfg, meta, None, result)
    print(json.dumps(_jsonable(result), sort_keys=True))
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    c = cfg["constraint"]
    try:
        res = scaling_sweep(
            cfg["n_list"], c["kind"], cfg["kappa"], cfg["t"], cfg["M"],
            g=c.get("g"), margin=c.get("c"), simulate=cfg["simulate"],
            simulate_max_atoms=cfg["simulate_max_atoms"], threads=args.threads,
            noise=cfg["synthetic_noise"], seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "$.n_list" if "n_list" in str(exc) else "$") from None
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(res.csv_rows())
    regimes = [{"N": r.n_atoms, "ratio_high": r.regime_ratio_high, "flags": r.flags} for r in res.rows]
    approx = ["synthetic multiplicative noise on closed-form values"] if cfg["synthetic_noise"] else []
    meta = run_metadata("sweep", cfg, regimes, approx, threads=args.threads, seed=args.seed)
    _emit(args, "sweep", cfg, meta, buf.getvalue(), res.summary())
    print(json.dumps(_jsonable(res.summary()["exponents"]), sort_keys=True))
    return EXIT_OK


def cmd_regime(cfg: dict, args) -> int:
    report = regime_check(_params(cfg), cfg["threshold"])
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.out_given:
        meta = run_metadata("regime", cfg, report.to_dict(), [], threads=args.threads, seed=args.seed)
        _emit(args, "regime", cfg, meta, None, report.to_dict())
    return EXIT_OK


def cmd_coupling(cfg: dict, args) -> int:
    geo = cfg["geometry"]
    try:
        ref = CavityGeometry(length=geo["length"], atom_position=geo["atom_position"],
                             transverse_area=geo["transverse_area"],
                             dipole_projection=geo["dipole_projection"],
                             mode_index=geo["mode_index"])
        pert = LengthPerturbation(cfg["x"], ref, cfg["co_moving"])
        sens = coupling_sensitivity(pert)
    except ValueError as exc:
        raise ConfigError(str(exc), "$.geometry") from None
    result = {"g_reference_rad_per_s": coupling_strength(ref), "g_at_x_rad_per_s": sens.g_at_x,
              "dg_dL": sens.dg_dL, "dg_dx": sens.dg_dx, "x": cfg["x"]}
    units = {"rates": "rad/s (SI)", "lengths": "m"}
    meta = run_metadata("coupling", cfg, None, [], units=units, threads=args.threads, seed=args.seed)
    _emit(args, "coupling", cfg, meta, None, result)
    print(json.dumps(_jsonable(result), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "evolve": cmd_evolve,
    "counting": cmd_counting,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "regime": cmd_regime,
    "coupling": cmd_coupling,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srmetro", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", default=None, help="output directory (default: current directory)")
    ap.add_argument("--format", choices=("csv", "json", "both"), default="both")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for synthetic-noise runs only")
    return ap


def _fail(kind: str, message: str, path: str | None = None, code: int = EXIT_VALIDATION) -> int:
    payload = {"error": kind, "message": message}
    if path is not None:
        payload["path"] = path
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.out_given = args.out is not None
    args.out = args.out or "."
    if args.threads < 1:
        return _fail("validation", "--threads must be >= 1", "--threads")
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        return _fail("validation", f"cannot read config: {exc}", "--config")
    except json.JSONDecodeError as exc:
        return _fail("validation", f"malformed JSON: {exc}", "$")
    if not isinstance(raw, dict):
        return _fail("validation", "config must be a JSON object", "$")
    try:
        cfg = resolve_config(args.subcommand, raw)
        return COMMANDS[args.subcommand](cfg, args)
    except ConfigError as exc:
        return _fail("validation", str(exc), exc.path)
    except InsensitiveObservableError as exc:
        return _fail("insensitive_observable", str(exc), code=EXIT_NUMERICAL)
    except (IntegrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", str(exc), code=EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
