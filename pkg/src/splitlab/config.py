"""INI experiment configuration shared by all subcommands."""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .frequencies import FrequencyVector, PerturbationSeries, QMode, parse_mode_table
from .pendulum import SolverOptions
from .torus import TorusOptions

SECTIONS = ("system", "perturbation", "solver", "experiment", "output")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser
    path: Path | None
    perturbation_text: str

    @classmethod
    def from_text(cls, text: str, base: Path | None = None, path: Path | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        unknown = [s for s in cp.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")
        for s in SECTIONS:
            if not cp.has_section(s):
                cp.add_section(s)
        pert = ""
        ps = cp["perturbation"]
        if "modes_file" in ps:
            mp = Path(ps["modes_file"])
            if not mp.is_absolute() and base is not None:
                mp = base / mp
            if not mp.is_file():
                raise ConfigError(f"mode file not found: {mp}")
            pert = mp.read_text()
        elif "modes" in ps:
            pert = "\n".join(line.strip() for line in ps["modes"].strip().splitlines()) + "\n"
        return cls(cp, path, pert)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), path.parent, path)

    # raw access -----------------------------------------------------------

    def get(self, section: str, key: str, default=None) -> str | None:
        return self.parser[section].get(key, default)

    def number(self, section: str, key: str, default: float | None = None) -> float:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        try:
            v = float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} is not a number: {raw!r}") from exc
        if not math.isfinite(v):
            raise ConfigError(f"[{section}] {key} must be finite")
        return v

    def integer(self, section: str, key: str, default: int | None = None) -> int:
        v = self.number(section, key, None if default is None else float(default))
        if v != int(v):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return int(v)

    def numbers(self, section: str, key: str, default: list[float] | None = None) -> list[float]:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return list(default)
        return _floats(raw)

    def integers(self, section: str, key: str, default: list[int] | None = None) -> list[int]:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return list(default)
        return _ints(raw)

    def canonical(self, seed: int | None = None) -> str:
        lines = []
        for s in SECTIONS:
            for k in sorted(self.parser[s]):
                lines.append(f"{s}.{k}={self.parser[s][k].strip()}")
        lines.append("perturbation.table=" + self.perturbation_text)
        if seed is not None:
            lines.append(f"seed={seed}")
        return "\n".join(lines)

    def digest(self, seed: int | None = None) -> str:
        return hashlib.sha256(self.canonical(seed).encode()).hexdigest()[:16]

    # typed views ------------------------------------------------------------

    def omega(self, eps: float | None = None) -> FrequencyVector:
        sec = "system"
        gamma = self.number(sec, "gamma", 1.0)
        tau = self.number(sec, "tau", 1.0)
        try:
            if eps is not None or "eps" in self.parser[sec]:
                e = eps if eps is not None else self.number(sec, "eps")
                slow = self.numbers(sec, "slow", [1.0])
                om = FrequencyVector.three_time_scale(e, self.number(sec, "a", 1.0), slow)
            else:
                om = FrequencyVector(tuple(self.numbers(sec, "omega")), gamma, tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if "n" in self.parser[sec] and self.integer(sec, "n") != om.n:
            raise ConfigError("[system] n does not match the frequency vector")
        return om

    def perturbation(self) -> PerturbationSeries:
        if not self.perturbation_text.strip():
            raise ConfigError("[perturbation] needs modes_file or modes")
        try:
            coefs, header = parse_mode_table(self.perturbation_text)
            q_mode = QMode(self.get("perturbation", "q_mode", header.get("q_mode", "factor")))
            widths = header.get("widths")
            if widths is not None:
                widths = tuple(_floats(widths))
            return PerturbationSeries(coefs, widths=widths, q_mode=q_mode)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad perturbation table: {exc}") from exc

    def solver_options(self) -> SolverOptions:
        base = SolverOptions()
        sec = "solver"
        try:
            return SolverOptions(
                tol=self.number(sec, "tol", base.tol),
                t_cut=self.number(sec, "t_cut") if "t_cut" in self.parser[sec] else None,
                degree=self.integer(sec, "degree", base.degree),
                max_elem_len=self.number(sec, "max_elem_len", base.max_elem_len),
                max_iter=self.integer(sec, "max_iter", base.max_iter),
                mu_max=self.number(sec, "mu_max", base.mu_max))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def torus_options(self) -> TorusOptions:
        base = TorusOptions()
        return TorusOptions(tol=self.number("solver", "torus_tol", base.tol),
                            max_iter=self.integer("solver", "torus_max_iter", base.max_iter),
                            oversample=self.integer("solver", "torus_oversample", base.oversample))

    def shape(self, key: str = "shape", default: list[int] | None = None) -> tuple[int, ...]:
        shp = self.integers("experiment", key, default)
        if not shp or min(shp) < 1:
            raise ConfigError(f"[experiment] {key} must list positive grid sizes")
        return tuple(shp)
