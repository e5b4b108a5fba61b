"""Sectioned ``key = value`` experiment configuration.

Recognised sections and keys (all optional except ``system.lambda``)::

    [system]    lambda, split, mu_i, mu_j, horizon, warmup, seed,
                bulletin_mode, chain_spread, chain_probs
    [behavior]  t_local, d, eta, r
    [policy]    enabled, alpha, step
    [bounds]    mu_min, mu_max
    [weights]   tau, phi, psi
    [sweep]     intervals, lambdas, replications, policy, base_seed,
                mu_headroom, initial_mu
    [optimize]  lambda_i, lambda_j, grid_lo, grid_hi, grid_step, references

Lists are comma separated. ``references`` holds ``r:mu_i:mu_j`` triples.
When ``mu_i``/``mu_j`` are omitted they default to the smallest lattice
rate at least ``mu_headroom`` above the queue's arrival rate.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfig, ParseError, ValidationError
from .impatience import BehaviorParams
from .optimizer import GridSpec, ObjectiveWeights, RateBounds
from .sim_engine import BULLETIN_MODES, SimConfig, SweepSpec, _lattice_ceil

# reference (non-optimised) rate pairs per dispatch interval
REFERENCE_PAIRS = {3.0: (4.5, 2.5), 5.0: (2.5, 0.5), 7.0: (6.5, 5.5), 9.0: (8.5, 6.5)}


@dataclass(frozen=True)
class OptimizeSpec:
    lam_i: float = 1.6
    lam_j: float = 0.4
    grid: GridSpec = GridSpec()
    references: dict = field(default_factory=lambda: dict(REFERENCE_PAIRS))


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    sweep: SweepSpec
    optimize: OptimizeSpec

    @property
    def weights(self) -> ObjectiveWeights:
        return self.sim.weights

    def to_dict(self) -> dict:
        s, sw, o = self.sim, self.sweep, self.optimize
        return {
            "system": {
                "lambda": s.lam,
                "split": s.split,
                "mu_i": s.mu_i,
                "mu_j": s.mu_j,
                "horizon": s.horizon,
                "warmup": s.warmup,
                "seed": s.seed,
                "bulletin_mode": s.bulletin_mode,
                "chain_spread": s.chain_spread,
                "chain_probs": list(s.chain_probs),
            },
            "behavior": dataclasses.asdict(s.bp),
            "policy": {"enabled": s.policy, "alpha": s.alpha, "step": s.step},
            "bounds": dataclasses.asdict(s.bounds),
            "weights": dataclasses.asdict(s.weights),
            "sweep": {
                "intervals": list(sw.intervals),
                "lambdas": list(sw.lambdas),
                "replications": sw.replications,
                "policy": sw.policy,
                "base_seed": sw.base_seed,
                "mu_headroom": sw.mu_headroom,
                "initial_mu": list(sw.initial_mu) if sw.initial_mu else None,
            },
            "optimize": {
                "lambda_i": o.lam_i,
                "lambda_j": o.lam_j,
                "grid_lo": o.grid.lo,
                "grid_hi": o.grid.hi,
                "grid_step": o.grid.step,
                "references": [[r, a, b] for r, (a, b) in sorted(o.references.items())],
            },
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_KEYS = {
    "system": {"lambda", "split", "mu_i", "mu_j", "horizon", "warmup", "seed",
               "bulletin_mode", "chain_spread", "chain_probs"},
    "behavior": {"t_local", "d", "eta", "r"},
    "policy": {"enabled", "alpha", "step"},
    "bounds": {"mu_min", "mu_max"},
    "weights": {"tau", "phi", "psi"},
    "sweep": {"intervals", "lambdas", "replications", "policy", "base_seed",
              "mu_headroom", "initial_mu"},
    "optimize": {"lambda_i", "lambda_j", "grid_lo", "grid_hi", "grid_step", "references"},
}


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and "=" in line:
            if line.split("=", 1)[0].strip().lower() == key:
                return n
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str):
        self.parser = parser
        self.text = text

    def _fail(self, section, key, message):
        raise ParseError(message, line=_key_line(self.text, section, key), field=f"{section}.{key}")

    def raw(self, section, key):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return None

    def num(self, section, key, default, cast=float):
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            value = cast(raw)
        except ValueError:
            self._fail(section, key, f"expected {cast.__name__}, got {raw!r}")
        if cast is float and not math.isfinite(value):
            self._fail(section, key, f"value must be finite, got {raw!r}")
        return value

    def flag(self, section, key, default):
        raw = self.raw(section, key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self._fail(section, key, f"expected a boolean, got {raw!r}")

    def floats(self, section, key, default):
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError:
            self._fail(section, key, f"expected comma-separated numbers, got {raw!r}")

    def text_value(self, section, key, default, choices=None):
        raw = self.raw(section, key)
        if raw is None:
            return default
        if choices and raw not in choices:
            self._fail(section, key, f"expected one of {sorted(choices)}, got {raw!r}")
        return raw


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("missing [section] header", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line=line) from exc
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from exc

    for section in parser.sections():
        if section not in _KEYS:
            raise ParseError(f"unknown section [{section}]", line=_section_line(text, section))
        for key in parser.options(section):
            if key not in _KEYS[section]:
                raise ParseError("unknown key", line=_key_line(text, section, key), field=f"{section}.{key}")
    rd = _Reader(parser, text)
    if rd.raw("system", "lambda") is None:
        raise ParseError("required key missing", field="system.lambda")

    try:
        bp = BehaviorParams(
            t_local=rd.num("behavior", "t_local", 2.0),
            d=rd.num("behavior", "d", 1.0),
            eta=rd.num("behavior", "eta", 0.2),
            r=rd.num("behavior", "r", 3.0),
        )
        bounds = RateBounds(rd.num("bounds", "mu_min", 0.5), rd.num("bounds", "mu_max", 15.0))
        weights = ObjectiveWeights(
            rd.num("weights", "tau", 1.0), rd.num("weights", "phi", 1.0), rd.num("weights", "psi", 1.0)
        )
        initial = rd.floats("sweep", "initial_mu", None)
        if initial is not None and len(initial) != 2:
            rd._fail("sweep", "initial_mu", "expected two rates mu_i, mu_j")
        sweep = SweepSpec(
            intervals=rd.floats("sweep", "intervals", SweepSpec.intervals),
            lambdas=rd.floats("sweep", "lambdas", SweepSpec.lambdas),
            replications=rd.num("sweep", "replications", 300, int),
            policy=rd.text_value("sweep", "policy", "both", {"on", "off", "both"}),
            base_seed=rd.num("sweep", "base_seed", 0, int),
            mu_headroom=rd.num("sweep", "mu_headroom", 1.0),
            initial_mu=initial,
        )
        lam = rd.num("system", "lambda", None)
        split = rd.num("system", "split", 0.5)
        step = rd.num("policy", "step", 0.5)
        mu_i = rd.num("system", "mu_i", None)
        mu_j = rd.num("system", "mu_j", None)
        if mu_i is None:
            mu_i = _lattice_ceil(lam * split + sweep.mu_headroom, step)
        if mu_j is None:
            mu_j = _lattice_ceil(lam * (1 - split) + sweep.mu_headroom, step)
        sim = SimConfig(
            lam=lam,
            split=split,
            mu_i=mu_i,
            mu_j=mu_j,
            bp=bp,
            horizon=rd.num("system", "horizon", 300.0),
            seed=rd.num("system", "seed", 0, int),
            policy=rd.flag("policy", "enabled", False),
            warmup=rd.num("system", "warmup", None),
            bulletin_mode=rd.text_value("system", "bulletin_mode", "round_robin", set(BULLETIN_MODES)),
            chain_spread=rd.num("system", "chain_spread", 0.2),
            chain_probs=rd.floats("system", "chain_probs", (0.25, 0.5, 0.25)),
            bounds=bounds,
            weights=weights,
            step=step,
            alpha=rd.num("policy", "alpha", 0.2),
        )
        opt = OptimizeSpec(
            lam_i=rd.num("optimize", "lambda_i", 1.6),
            lam_j=rd.num("optimize", "lambda_j", 0.4),
            grid=GridSpec(
                rd.num("optimize", "grid_lo", 0.5),
                rd.num("optimize", "grid_hi", 15.0),
                rd.num("optimize", "grid_step", 0.5),
            ),
            references=_parse_references(rd),
        )
        if not (opt.lam_i > 0 and opt.lam_j > 0):
            raise ValidationError("optimize arrival rates must be positive")
    except ParseError:
        raise
    except InvalidConfig as exc:
        raise ValidationError(str(exc)) from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return ExperimentConfig(sim, sweep, opt)


def _section_line(text, section):
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return n
    return None


def _parse_references(rd: _Reader) -> dict:
    raw = rd.raw("optimize", "references")
    if raw is None:
        return dict(REFERENCE_PAIRS)
    out = {}
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            r, a, b = (float(v) for v in item.split(":"))
        except ValueError:
            rd._fail("optimize", "references", f"expected r:mu_i:mu_j, got {item!r}")
        out[r] = (a, b)
    return out


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config_text(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ", ".join(":".join(repr(float(x)) for x in v) for v in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if value is None:
                continue
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def default_config() -> ExperimentConfig:
    return parse_config_text("[system]\nlambda = 6.0\n")
