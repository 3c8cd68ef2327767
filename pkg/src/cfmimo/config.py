"""Configuration dataclasses and the flat key-value config file grammar.

Config files are plain text, one `section.key = value` per line, `#` starts
a comment line, blank lines ignored.  Sections map onto the dataclasses
below: `system.*` (physical scenario), `select.*` (port selection), `run.*`
(runner controls), `sweep.*` (experiment sweep axes).  Lists are written as
comma-separated values.  Example:

    system.n_bs = 2
    system.n_ports = 16
    select.ports_per_user = 4
    sweep.p_values = 2, 4, 6, 8
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from cfmimo.errors import ConfigError


@dataclass
class SystemConfig:
    """Physical-layer scenario parameters."""

    n_bs: int = 2            # number of base stations
    n_ports: int = 16        # antennas per BS = beamspace ports per BS
    n_users: int = 2
    eff_ports: int = 6       # ports with nonzero average power per link
    coupled_ports: int = 1   # leading effective ports correlated across BSs
    as_deg: float = 5.0      # angular spread of the port power profile
    f0_ghz: float = 2.1      # carrier frequency
    d_bs: float = 500.0      # inter-site distance, meters
    r0: float = 50.0         # user drop radius around a cluster center
    rho_s: float = 0.0       # neighbor-port correlation within a BS
    rho_c: float = 0.0       # inter-BS port correlation
    sigma_n2: float = 1.0    # receiver noise power, linear
    snr_db: float = 15.0     # system SNR referenced to the weakest link gain
    eps_ce2: float = 0.0     # estimation error variance on selected ports
    eps_q2: float = 0.0      # quantization error variance on selected ports
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_bs, self.n_users, self.n_ports) < 1:
            raise ConfigError("n_bs, n_users and n_ports must all be >= 1")
        if not (self.n_ports >= self.eff_ports >= self.coupled_ports >= 0):
            raise ConfigError(
                "need n_ports >= eff_ports >= coupled_ports >= 0, got "
                f"{self.n_ports} / {self.eff_ports} / {self.coupled_ports}"
            )
        if self.eff_ports < 1:
            raise ConfigError("eff_ports must be >= 1")
        if not 0.0 <= self.eps_ce2 < 1.0 or not 0.0 <= self.eps_q2 < 1.0:
            raise ConfigError("error variances must lie in [0, 1)")
        if self.eps_ce2 + self.eps_q2 >= 1.0:
            raise ConfigError("eps_ce2 + eps_q2 must be < 1")
        if abs(self.rho_s) > 1.0:
            raise ConfigError("rho_s must lie in [-1, 1]")
        if not 0.0 <= self.rho_c <= 1.0:
            raise ConfigError("rho_c must lie in [0, 1]")
        if self.f0_ghz <= 0.0 or self.d_bs <= 0.0:
            raise ConfigError("f0_ghz and d_bs must be positive")
        if self.r0 < 0.0:
            raise ConfigError("r0 must be >= 0")
        if self.sigma_n2 <= 0.0:
            raise ConfigError("sigma_n2 must be positive")

    @property
    def eps2(self) -> float:
        """Overall error level on selected-port coefficients."""
        return self.eps_ce2 + self.eps_q2


@dataclass
class SelectConfig:
    ports_per_user: int = 4      # total port budget per user, split across BSs
    n_rand: int = 100            # greedy-search restart rounds
    method: str = "gs-jps"       # gs-jps | mm-s
    max_space: int = 1_000_000   # exhaustive enumeration cap

    def validate(self) -> None:
        if self.ports_per_user < 1:
            raise ConfigError("ports_per_user must be >= 1")
        if self.n_rand < 1:
            raise ConfigError("n_rand must be >= 1")
        if self.method not in ("gs-jps", "mm-s"):
            raise ConfigError(f"unknown selection method {self.method!r}")


@dataclass
class RunConfig:
    n_real: int = 100_000        # Monte Carlo realizations per rate estimate
    n_scen: int = 500            # scenario draws for distribution estimates
    with_mc: bool = False        # add Monte Carlo columns where optional
    selection_file: str = ""     # input selections for dl-eval
    with_reference: bool = True  # add a greedy-search reference column to dl-eval

    def validate(self) -> None:
        if self.n_real < 1 or self.n_scen < 1:
            raise ConfigError("n_real and n_scen must be >= 1")


@dataclass
class SweepConfig:
    p_values: tuple = (2, 4, 6, 8)
    l_values: tuple = (4, 6, 8)
    l0_values: tuple = (0, 2, 4, 6)
    rho_s_values: tuple = (0.0, 0.3)
    rho_c_values: tuple = (0.0, 0.8)
    eps2_values: tuple = (0.0, 0.05)


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> None:
        self.system.validate()
        self.select.validate()
        self.run.validate()

    def items(self) -> list[tuple[str, object]]:
        """Flat, sorted (key, value) view of every resolved setting."""
        out = []
        for section in ("system", "select", "run", "sweep"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                out.append((f"{section}.{f.name}", getattr(obj, f.name)))
        return sorted(out)


_SECTIONS = {
    "system": SystemConfig,
    "select": SelectConfig,
    "run": RunConfig,
    "sweep": SweepConfig,
}


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return text


def _parse_value(text: str, target_field) -> object:
    if target_field.type in ("tuple", tuple) or isinstance(target_field.default, tuple):
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        elems = []
        for p in parts:
            try:
                elems.append(int(p))
            except ValueError:
                elems.append(float(p))
        return tuple(elems)
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(
        target_field.type if isinstance(target_field.type, str) else target_field.type.__name__,
        str,
    )
    return _parse_scalar(text, kind)


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat config file and return the merged configuration.

    `overrides` maps dotted keys to raw string values (used for CLI flags);
    unknown keys are an error so typos do not silently fall back to defaults.
    """
    cfg = ExperimentConfig()
    entries: list[tuple[str, str]] = []
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
            key, val = line.split("=", 1)
            entries.append((key.strip(), val.strip()))
    for key, val in (overrides or {}).items():
        entries.append((key, str(val)))

    for key, val in entries:
        if "." not in key:
            raise ConfigError(f"config key {key!r} is missing its section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        obj = getattr(cfg, section)
        matching = [f for f in dataclasses.fields(obj) if f.name == name]
        if not matching:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            parsed = _parse_value(val, matching[0])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        setattr(obj, name, parsed)

    cfg.validate()
    return cfg


def config_header_lines(cfg: ExperimentConfig, extra: dict | None = None) -> list[str]:
    """Comment lines echoing every resolved setting, for CSV headers."""
    lines = []
    for key, value in (extra or {}).items():
        lines.append(f"# {key} = {value}")
    for key, value in cfg.items():
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"# {key} = {value}")
    return lines
