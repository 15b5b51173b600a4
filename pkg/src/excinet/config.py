"""TOML configuration files for network runs.

A config holds a mandatory ``[network]`` table mirroring :class:`NetworkSpec`
and optional ``[optimizer]`` and ``[chain]`` tables. :func:`dump_config` writes
the canonical layout; loading a canonical file and dumping it again reproduces
the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .network import ChainSpec, NetworkSpec, SpecError
from .optimize import OptimizerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN_CONFIGS = ("fmo7",)

NETWORK_KEYS = (
    "n_sites",
    "hbar",
    "rate_factor",
    "initial_site",
    "sink_sites",
    "sink_rate",
    "local_energies",
    "dephasing_rates",
    "loss_rates",
    "couplings",
)
OPTIMIZER_KEYS = tuple(f.name for f in dataclasses.fields(OptimizerConfig))
CHAIN_KEYS = tuple(f.name for f in dataclasses.fields(ChainSpec))


class ConfigError(ValueError):
    """A config file that cannot be parsed or describes an invalid network."""

    def __init__(self, message: str, source: str | None = None):
        self.source = source
        super().__init__(f"{source}: {message}" if source else message)


@dataclass
class RunConfig:
    network: NetworkSpec
    optimizer: OptimizerConfig | None = None
    chain: ChainSpec | None = None
    source: str | None = None


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("excinet") / "data" / f"{name}.toml"))


def resolve_path(path_or_name) -> Path:
    """A filesystem path, or the name of a config shipped with the package."""
    if str(path_or_name) in BUILTIN_CONFIGS:
        return builtin_path(str(path_or_name))
    return Path(path_or_name)


def load_config(path_or_name) -> RunConfig:
    path = resolve_path(path_or_name)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc), source) from exc

    unknown = set(data) - {"network", "optimizer", "chain"}
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}", source)
    if "network" not in data:
        raise ConfigError("missing [network] table", source)

    network = _parse_network(data["network"], source)
    optimizer = chain = None
    if "optimizer" in data:
        optimizer = _parse_table(data["optimizer"], OPTIMIZER_KEYS, OptimizerConfig, "optimizer", source)
    if "chain" in data:
        chain = _parse_table(data["chain"], CHAIN_KEYS, ChainSpec, "chain", source)
    return RunConfig(network=network, optimizer=optimizer, chain=chain, source=source)


def _parse_table(table: dict, keys, cls, name: str, source):
    unknown = set(table) - set(keys)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(sorted(unknown))}", source)
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}", source) from exc


def _parse_network(table: dict, source) -> NetworkSpec:
    unknown = set(table) - set(NETWORK_KEYS)
    if unknown:
        raise ConfigError(f"network: unknown key(s) {', '.join(sorted(unknown))}", source)
    required = set(NETWORK_KEYS) - {"hbar", "rate_factor"}
    missing = required - set(table)
    if missing:
        raise ConfigError(f"network: missing key(s) {', '.join(sorted(missing))}", source)
    couplings = table["couplings"]
    if not isinstance(couplings, list) or not all(isinstance(row, list) for row in couplings):
        raise ConfigError("network.couplings: expected an array of row arrays", source)
    n = table["n_sites"]
    if not isinstance(n, int) or n < 1:
        raise ConfigError("network.n_sites: expected a positive integer", source)
    if len(couplings) != n or any(len(row) != n for row in couplings):
        raise ConfigError(f"network.couplings: expected {n} rows of {n} entries", source)
    kwargs = {k: v for k, v in table.items() if k != "n_sites"}
    try:
        return NetworkSpec(**kwargs)
    except SpecError as exc:
        raise ConfigError(f"network.{exc}", source) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network: {exc}", source) from exc


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not np.isfinite(v):
            raise ValueError("non-finite values cannot be written to a config")
        return repr(v)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot format {type(value).__name__}")


def _fmt_array(values) -> str:
    return "[" + ", ".join(_fmt(v) for v in values) + "]"


def dump_config(cfg: RunConfig | NetworkSpec) -> str:
    if isinstance(cfg, NetworkSpec):
        cfg = RunConfig(network=cfg)
    spec = cfg.network
    lines = [
        "[network]",
        f"n_sites = {spec.n_sites}",
        f"hbar = {_fmt(spec.hbar)}",
        f"rate_factor = {_fmt(spec.rate_factor)}",
        f"initial_site = {spec.initial_site}",
        f"sink_sites = {_fmt_array(spec.sink_sites)}",
        f"sink_rate = {_fmt(spec.sink_rate)}",
        f"local_energies = {_fmt_array(spec.local_energies)}",
        f"dephasing_rates = {_fmt_array(spec.dephasing_rates)}",
        f"loss_rates = {_fmt_array(spec.loss_rates)}",
        "couplings = [",
        *(f"    {_fmt_array(row)}," for row in spec.couplings),
        "]",
    ]
    if cfg.optimizer is not None:
        lines += ["", "[optimizer]"]
        for f in dataclasses.fields(cfg.optimizer):
            value = getattr(cfg.optimizer, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_fmt(value)}")
    if cfg.chain is not None:
        lines += ["", "[chain]"]
        for f in dataclasses.fields(cfg.chain):
            lines.append(f"{f.name} = {_fmt(getattr(cfg.chain, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig | NetworkSpec, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")
