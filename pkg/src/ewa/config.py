"""Experiment configuration: TOML files validated against a fixed schema.

Every table and key is listed in ``SCHEMA`` with its type and default;
anything else is rejected with the dotted key path.
"""

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

__all__ = ["SCHEMA", "MODES", "load_config", "validate", "config_hash"]

MODES = ("theory-nngp", "theory-ewa", "sample", "ldp", "noncentral", "compare")

_num = (int, float)

SCHEMA = {
    "mode": (str, "theory-ewa"),
    "seed": (int, 0),
    "out": (str, "ewa-out"),
    "dataset": {
        "kind": (str, "gaussian"),
        "N0": (int, 300),
        "P": (int, 200),
        "P_t": (int, 1000),
        "classes": (list, [0, 1]),
        "data_dir": (str, ""),
        "standardize": (bool, True),
    },
    "network": {
        "kind": (str, "mlp"),
        "L": (int, 1),
        "N": (int, 100),
        "activation": (str, "erf"),
        "precisions": (list, []),
        "lam": (_num, 1.0),
        "temperature": (_num, 0.1),
        "parametrization": (str, "sp"),
        "gamma0": (_num, 1.0),
    },
    "sampler": {
        "kind": (str, "lmc"),
        "eta": (_num, 1e-3),
        "phi": (_num, 0.01),
        "steps": (int, 10000),
        "burn_in": (int, 1000),
        "thin": (int, 10),
        "chains": (int, 1),
        "n_outputs": (int, 10),
    },
    "grid": {
        "L": (list, []),
        "N": (list, []),
    },
    "ldp": {
        "samples": (int, 5000),
        "n_bins": (int, 40),
        "overlap": (_num, 0.0),
        "conditional": (bool, False),
        "x_min": (_num, 0.75),
        "x_max": (_num, 1.3),
    },
}


def _fill(schema, cfg, path):
    out = {}
    for key in cfg:
        if key not in schema:
            raise ConfigError(f"unknown key '{path}{key}'")
    for key, spec in schema.items():
        if isinstance(spec, dict):
            sub = cfg.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"'{path}{key}' must be a table")
            out[key] = _fill(spec, sub, f"{path}{key}.")
            continue
        typ, default = spec
        if key not in cfg:
            out[key] = copy.deepcopy(default)
            continue
        val = cfg[key]
        # bool is an int subclass; only accept it where a bool is expected
        if not isinstance(val, typ) or (isinstance(val, bool) and typ is not bool):
            raise ConfigError(f"'{path}{key}' has the wrong type ({type(val).__name__})")
        out[key] = float(val) if typ is _num else val
    return out


def validate(cfg):
    """Schema-checked copy of ``cfg`` with defaults filled in."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a table")
    out = _fill(SCHEMA, cfg, "")
    if out["mode"] not in MODES:
        raise ConfigError(f"'mode' must be one of {', '.join(MODES)}")
    if out["seed"] < 0 or out["seed"] >= 2**64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer")
    ds, net, smp = out["dataset"], out["network"], out["sampler"]
    if ds["kind"] not in ("gaussian", "mnist", "cifar10"):
        raise ConfigError("'dataset.kind' must be gaussian, mnist or cifar10")
    for k in ("N0", "P", "P_t"):
        if ds[k] < 1:
            raise ConfigError(f"'dataset.{k}' must be positive")
    if len(ds["classes"]) != 2:
        raise ConfigError("'dataset.classes' needs two entries")
    if net["kind"] != "mlp":
        raise ConfigError("'network.kind': the runner supports fully connected networks")
    if net["L"] < 0 or net["N"] < 1:
        raise ConfigError("'network.L' must be >= 0 and 'network.N' >= 1")
    if net["activation"] not in ("erf", "relu", "identity"):
        raise ConfigError("'network.activation' must be erf, relu or identity")
    if net["parametrization"] not in ("sp", "mup"):
        raise ConfigError("'network.parametrization' must be sp or mup")
    if not net["temperature"] > 0 or not net["lam"] > 0:
        raise ConfigError("'network.temperature' and 'network.lam' must be positive")
    if smp["kind"] not in ("lmc", "mala", "pcn"):
        raise ConfigError("'sampler.kind' must be lmc, mala or pcn")
    if smp["steps"] < 1 or smp["thin"] < 1 or smp["burn_in"] < 0 or smp["chains"] < 1:
        raise ConfigError("sampler steps/thin/chains must be positive and burn_in non-negative")
    return out


def load_config(path, overrides=None):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return validate(raw)


def config_hash(cfg):
    """SHA-256 of the canonical config; the output directory is not part of it."""
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
