"""Run configuration for the command-line laboratory.

Config files are flat key=value lines (no sections, no nesting); arrays are
comma-separated scalars.  Every key has a default, so the empty file is a
valid configuration, and unknown keys are rejected with the offending line
number rather than silently ignored.  A run echoes its resolved
configuration to config.echo in the same format; reloading that file
reproduces the RunConfig exactly.  The execution-placement keys (output
directory, worker count) are deliberately left out of the echo and the
manifest: outputs must be byte-identical across worker counts and target
directories, so nothing that varies with them may appear in an artifact.
"""

from __future__ import annotations

import dataclasses
import json
import platform
import sys
from pathlib import Path

from .params import MapParams, make_params, preset_params

COMMANDS = (
    "orbit",
    "lyapunov",
    "pressure-curve",
    "spectrum",
    "gibbs-check",
    "ldp",
    "decomp-stats",
    "probes",
)

_SAMPLERS = ("lebesgue", "linger-biased")
_BACKENDS = ("count", "geometric")
_PARAM_KEYS = ("alpha", "r0", "epsilon", "ode_step", "quad_tol")


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {text!r}") from None


def _parse_float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {text!r}") from None


def _parse_str(key, text):
    return text


def _parse_ints(key, text):
    if not text:
        return ()
    return tuple(_parse_int(key, p.strip()) for p in text.split(","))


def _parse_floats(key, text):
    if not text:
        return ()
    return tuple(_parse_float(key, p.strip()) for p in text.split(","))


def _at_least(lo):
    def check(key, v):
        if v < lo:
            raise ConfigError(f"{key} must be at least {lo}, got {v}")
    return check


def _in_unit(key, v):
    if not 0.0 < v <= 1.0:
        raise ConfigError(f"{key} must lie in (0, 1], got {v}")


def _choice(options):
    def check(key, v):
        if v not in options:
            opts = ", ".join(repr(o) for o in options)
            raise ConfigError(f"{key} must be one of {opts}, got {v!r}")
    return check


def _seed_check(key, v):
    if not 0 <= v < 2 ** 64:
        raise ConfigError(f"{key} must be an unsigned 64-bit integer, got {v}")


def _nonneg(key, v):
    if v < 0:
        raise ConfigError(f"{key} must be nonnegative, got {v}")


def _no_check(key, v):
    pass


# key -> (parser, default, validator).  Order fixes the echo layout.
_SCHEMA = {
    "command": (_parse_str, "", _no_check),
    "seed": (_parse_int, 0, _seed_check),
    "out": (_parse_str, "runs", _no_check),
    "workers": (_parse_int, 0, _nonneg),
    "preset": (_parse_str, "", _no_check),
    "alpha": (_parse_float, 0.1, _no_check),
    "r0": (_parse_float, 0.01, _no_check),
    "epsilon": (_parse_float, 0.01, _no_check),
    "ode_step": (_parse_float, 1.0 / 16.0, _no_check),
    "quad_tol": (_parse_float, 1e-10, _no_check),
    "length": (_parse_int, 4096, _at_least(1)),
    "x0": (_parse_str, "", _no_check),
    "lyap_n": (_parse_int, 2000, _at_least(1)),
    "lyap_samples": (_parse_int, 400, _at_least(1)),
    "sampler": (_parse_str, "lebesgue", _choice(_SAMPLERS)),
    "bins": (_parse_int, 40, _at_least(2)),
    "t_min": (_parse_float, -8.0, _no_check),
    "t_max": (_parse_float, 2.0, _no_check),
    "t_step": (_parse_float, 0.25, _no_check),
    "resolution": (_parse_int, 512, _at_least(2)),
    "delta": (_parse_float, 0.125, _in_unit),
    "curve_n": (_parse_ints, (), _no_check),
    "alpha_points": (_parse_int, 48, _at_least(2)),
    "proxy_length": (_parse_int, 16384, _at_least(1)),
    "gibbs_ns": (_parse_ints, (16, 32, 64), _no_check),
    "gibbs_samples": (_parse_int, 50, _at_least(1)),
    "gibbs_scale": (_parse_float, 0.0, _nonneg),
    "gibbs_backend": (_parse_str, "geometric", _choice(_BACKENDS)),
    "gibbs_mc": (_parse_int, 256, _at_least(1)),
    "ldp_deltas": (_parse_floats, (0.0, 0.05, 0.1, 0.2), _no_check),
    "ldp_t_min": (_parse_float, -2.0, _no_check),
    "ldp_t_max": (_parse_float, 2.0, _no_check),
    "ldp_t_step": (_parse_float, 0.5, _no_check),
    "ldp_n": (_parse_ints, (16, 24, 32, 48, 64), _no_check),
    "decomp_n": (_parse_int, 64, _at_least(1)),
    "decomp_samples": (_parse_int, 5000, _at_least(1)),
    "decomp_r": (_parse_float, 0.3, _in_unit),
    "probe_samples": (_parse_int, 1000, _at_least(1)),
    "cone_samples": (_parse_int, 10000, _at_least(1)),
    "probe_r": (_parse_float, 0.3, _in_unit),
    "probe_scale": (_parse_float, 0.05, _no_check),
    "probe_trials": (_parse_int, 100, _at_least(1)),
    "probe_nmax": (_parse_int, 512, _at_least(8)),
}

# keys that describe where and how a run executes, not what it computes
_PLACEMENT_KEYS = ("out", "workers")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: map parameters plus pipeline knobs."""

    params: MapParams
    command: str
    seed: int
    output_dir: str
    workers: int
    options: dict

    def option(self, key):
        return self.options[key]


def _parse_lines(text: str):
    """key -> value strings, with the line number of each assignment."""
    raw, lines = {}, {}
    for i, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {i}: expected key=value, got {line.strip()!r}")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {i}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {i}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        raw[key] = value
        lines[key] = i
    return raw, lines


def _build_params(values, explicit) -> MapParams:
    preset = values["preset"]
    overrides = [k for k in _PARAM_KEYS if k in explicit]
    if preset:
        if overrides:
            raise ConfigError(
                "preset and explicit map parameters are mutually exclusive; "
                f"drop preset={preset} or the keys {', '.join(overrides)}")
        try:
            return preset_params(preset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return make_params(values["alpha"], values["r0"], values["epsilon"],
                           values["ode_step"], values["quad_tol"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, *, command=None, seed=None, out=None,
                workers=None) -> RunConfig:
    """Read a key=value config file and apply command-line overrides.

    Any subset of keys may appear; the rest take their defaults.  Parse
    errors carry the line number, validation errors name the violated
    invariant.  path=None loads the all-defaults configuration.
    """
    if path is not None:
        text = Path(path).read_text()
        raw, lines = _parse_lines(text)
    else:
        raw, lines = {}, {}

    values, explicit = {}, set(raw)
    for key, (parse, default, check) in _SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(key, raw[key])
            except ConfigError as exc:
                raise ConfigError(f"line {lines[key]}: {exc}") from None
        else:
            values[key] = default

    if command is not None:
        values["command"] = command
    if seed is not None:
        values["seed"] = seed
        explicit.add("seed")
    if out is not None:
        values["out"] = out
    if workers is not None:
        values["workers"] = workers

    for key, (parse, default, check) in _SCHEMA.items():
        check(key, values[key])
    if values["command"] not in COMMANDS:
        got = values["command"] or "(none)"
        raise ConfigError(f"unknown command {got!r}; choose from "
                          + ", ".join(COMMANDS))

    params = _build_params(values, explicit)
    options = {k: v for k, v in values.items()
               if k not in ("command", "seed", "out", "workers")}
    return RunConfig(params=params, command=values["command"],
                     seed=values["seed"], output_dir=values["out"],
                     workers=values["workers"], options=options)


# --------------------------------------------------------------- manifest


def _echo_value(v):
    if isinstance(v, tuple):
        return ",".join(_echo_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_echo(cfg: RunConfig) -> str:
    """The resolved configuration, reloadable through load_config."""
    values = dict(cfg.options)
    values["command"] = cfg.command
    values["seed"] = cfg.seed
    out = []
    for key in _SCHEMA:
        if key in _PLACEMENT_KEYS:
            continue
        if cfg.options.get("preset") and key in _PARAM_KEYS:
            continue  # the preset alone pins them; echoing both would clash
        if not cfg.options.get("preset") and key == "preset":
            continue
        out.append(f"{key}={_echo_value(values[key])}")
    return "\n".join(out) + "\n"


def derived_constants(cfg: RunConfig, kmap) -> dict:
    """Every constant the modules derive from the raw parameters."""
    d = {k: v for k, v in cfg.params.as_dict().items()
         if k not in ("alpha", "r0", "epsilon", "ode_step", "quad_tol")}
    d["log_lam"] = cfg.params.log_lam
    d["c0"] = kmap.c0
    d["kappa0"] = kmap.kappa0
    return d


def manifest_dict(cfg: RunConfig, kmap) -> dict:
    from . import __version__
    config = {k: v for k, v in cfg.options.items()
              if not (cfg.options.get("preset") and k in _PARAM_KEYS)}
    config["command"] = cfg.command
    config["seed"] = cfg.seed
    return {
        "command": cfg.command,
        "config": config,
        "derived": derived_constants(cfg, kmap),
        "versions": {
            "python": platform.python_version(),
            "numpy": _module_version("numpy"),
            "scipy": _module_version("scipy"),
            "numba": _module_version("numba"),
            "katoklab": __version__,
        },
    }


def _module_version(name):
    mod = sys.modules.get(name)
    if mod is None:
        import importlib

        mod = importlib.import_module(name)
    return getattr(mod, "__version__", "unknown")


def write_manifest(cfg: RunConfig, kmap, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.echo").write_text(config_echo(cfg))
    payload = json.dumps(manifest_dict(cfg, kmap), sort_keys=True, indent=2)
    (outdir / "manifest.json").write_text(payload + "\n")
