"""Experiment configuration: a line-oriented key=value format with [section]
headers, strict key checking and line-numbered diagnostics.

Sections and keys (all optional; defaults reproduce the standard desk setup:
4 base and relay antennas, 2 users with 2 antennas and 2 streams each):

    [system]
    direction = downlink | uplink
    n_base = 4
    n_relay = 4
    users = 2
    n_mobile = 2          # one int, or one per user: 2,2
    streams = 2           # one int, or one per user
    source_power = 4.0    # defaults to the total stream count
    relay_power = 4.0

    [sweep]
    first_hop_snr_db = 0,10,20,30
    second_hop_snr_db = 20       # sweep points are the cross product

    [run]
    trials = 500
    symbols_per_stream = 10000
    seed = 1
    threshold = 1e-4
    max_iter = 100
    algorithms = joint,separate-lmmse   # designer ids, see simulate module

Values may also be overridden from the command line as `--set key=value`
(keys are unique across sections, so no section prefix is needed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .channel import DOWNLINK, UPLINK, SystemDims, default_budget
from .errors import InvalidInputError

_SECTIONS = {
    "system": {"direction", "n_base", "n_relay", "users", "n_mobile",
               "streams", "source_power", "relay_power"},
    "sweep": {"first_hop_snr_db", "second_hop_snr_db"},
    "run": {"trials", "symbols_per_stream", "seed", "threshold", "max_iter",
            "algorithms"},
}
_ALL_KEYS = {k: s for s, keys in _SECTIONS.items() for k in keys}


@dataclass
class ExperimentConfig:
    dims: SystemDims
    sweep: list                      # (first hop SNR dB, second hop SNR dB)
    symbols_per_stream: int = 10000
    trials: int = 500
    seed: int = 1
    algorithms: list = field(default_factory=lambda: ["joint"])
    threshold: float = 1e-4
    max_iter: int = 100
    source_power: float = None
    relay_power: float = None

    def __post_init__(self):
        if self.trials < 1 or self.symbols_per_stream < 1 or self.max_iter < 0:
            raise InvalidInputError("counts must be positive")
        if self.threshold <= 0:
            raise InvalidInputError("threshold must be positive")
        if not self.sweep:
            raise InvalidInputError("sweep must contain at least one point")
        if self.source_power is None:
            self.source_power = float(self.dims.total_streams)
        if self.relay_power is None:
            self.relay_power = float(self.dims.total_streams)

    def budget(self):
        return default_budget(self.dims, self.source_power, self.relay_power)


def default_config(direction=DOWNLINK):
    dims = SystemDims(4, 4, ((2, 2), (2, 2)), direction)
    return ExperimentConfig(dims=dims, sweep=[(20.0, 20.0)])


def _parse_scalar(key, raw, lineno, cast):
    try:
        return cast(raw)
    except ValueError as exc:
        raise InvalidInputError(
            f"line {lineno}: invalid value {raw!r} for {key}") from exc


def _parse_list(raw, cast):
    return [cast(tok.strip()) for tok in raw.split(",") if tok.strip()]


def parse_config(text, base_direction=None):
    """Parse the documented config format into an ExperimentConfig.

    Malformed lines and unknown keys raise with the offending line number;
    inconsistent dimensions raise a validation error.
    """
    return build_config(raw_values(text), base_direction=base_direction)


def build_config(values, base_direction=None):
    """Assemble an ExperimentConfig from a {key: (raw, lineno)} mapping."""

    def take(key, cast, default):
        if key in values:
            raw, lineno = values[key]
            return _parse_scalar(key, raw, lineno, cast)
        return default

    direction = take("direction", str, base_direction or DOWNLINK).lower()
    if direction not in (DOWNLINK, UPLINK):
        raise InvalidInputError(f"unknown direction {direction!r}")
    n_base = take("n_base", int, 4)
    n_relay = take("n_relay", int, 4)
    n_users = take("users", int, 2)
    if n_users < 1:
        raise InvalidInputError("users must be >= 1")

    def per_user(key, default):
        if key in values:
            raw, lineno = values[key]
            items = _parse_list(raw, int)
            if len(items) == 1:
                items = items * n_users
            if len(items) != n_users:
                raise InvalidInputError(
                    f"line {lineno}: {key} needs 1 or {n_users} entries")
            return items
        return [default] * n_users

    n_mobile = per_user("n_mobile", 2)
    streams = per_user("streams", 2)
    dims = SystemDims(n_base, n_relay,
                      tuple(zip(n_mobile, streams)), direction)

    def snr_list(key, default):
        if key in values:
            raw, lineno = values[key]
            out = _parse_list(raw, float)
            if not out:
                raise InvalidInputError(f"line {lineno}: {key} is empty")
            return out
        return [default]

    first = snr_list("first_hop_snr_db", 20.0)
    second = snr_list("second_hop_snr_db", 20.0)
    sweep = [(s1, s2) for s1 in first for s2 in second]

    algorithms = ["joint"]
    if "algorithms" in values:
        raw, lineno = values["algorithms"]
        algorithms = _parse_list(raw, str)
        if not algorithms:
            raise InvalidInputError(f"line {lineno}: algorithms is empty")

    return ExperimentConfig(
        dims=dims,
        sweep=sweep,
        symbols_per_stream=take("symbols_per_stream", int, 10000),
        trials=take("trials", int, 500),
        seed=take("seed", int, 1),
        algorithms=algorithms,
        threshold=take("threshold", float, 1e-4),
        max_iter=take("max_iter", int, 100),
        source_power=take("source_power", float, None),
        relay_power=take("relay_power", float, None),
    )


def apply_overrides(config_values, overrides):
    """Merge --set key=value overrides into the raw value mapping."""
    out = dict(config_values)
    for i, item in enumerate(overrides):
        if "=" not in item:
            raise InvalidInputError(
                f"override {i + 1} ({item!r}): expected key=value")
        key, _, value = item.partition("=")
        key = key.strip().lower()
        if key not in _ALL_KEYS:
            raise InvalidInputError(f"override {i + 1}: unknown key {key!r}")
        out[key] = (value.strip(), 0)
    return out


def raw_values(text):
    """Parse only to the raw {key: (value, lineno)} mapping (for overrides)."""
    values = {}
    section = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise InvalidInputError(f"line {lineno}: unknown section "
                                        f"[{section}]")
            continue
        if "=" not in line:
            raise InvalidInputError(
                f"line {lineno}: expected key=value, got {rawline.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise InvalidInputError(f"line {lineno}: unknown key {key!r}")
        if section is not None and key not in _SECTIONS[section]:
            raise InvalidInputError(
                f"line {lineno}: key {key!r} does not belong to [{section}]")
        values[key] = (value, lineno)
    return values
