"""JSON run configuration with schema validation and defaults."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .process import ChainSpec

__all__ = ["ConfigError", "ModelConfig", "SimConfig", "TruncationConfig", "CheckRequest", "RunConfig", "parse_config", "load_config"]

KINDS = ("spin_half", "spin_s", "levy")
SUITES = ("ybe", "bybe", "transfer", "hamiltonian", "duality", "reversibility", "limits", "levy")


class ConfigError(ValueError):
    """Schema violation; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    N: int
    s: Fraction = Fraction(1, 2)
    beta_left: float | None = None
    beta_right: float | None = None
    lambda_left: float | None = None
    lambda_right: float | None = None
    closed: bool = False

    def chain(self, exact: bool = False) -> ChainSpec:
        """The particle chain; betas become rationals (0.4 -> 2/5) when ``exact``."""
        if self.kind == "levy":
            raise ConfigError("a levy model has no discrete chain")
        if self.closed:
            return ChainSpec(self.N, self.s, closed=True)
        conv = (lambda b: Fraction(str(b))) if exact else float
        s = self.s if exact else float(self.s)
        return ChainSpec(self.N, s, conv(self.beta_left), conv(self.beta_right))


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 100.0
    n_traj: int = 4
    seed: int = 0
    burn_in: float = 10.0
    epsilon: float = 1e-6
    init: tuple | None = None


@dataclass(frozen=True)
class TruncationConfig:
    m_cap: int = 16
    tail_tol: float = 1e-10


@dataclass(frozen=True)
class CheckRequest:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    sim: SimConfig = SimConfig()
    truncation: TruncationConfig = TruncationConfig()
    checks: tuple = ()
    source: str | None = None

    def overrides(self, suite: str) -> dict:
        """Merged parameter overrides for one verify suite."""
        out = {}
        for c in self.checks:
            if c.name == suite:
                out.update(c.params)
        return out


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

_SECTIONS = {
    "model": {"kind", "N", "s", "beta_left", "beta_right", "lambda_left", "lambda_right", "closed"},
    "sim": {"horizon", "n_traj", "seed", "burn_in", "epsilon", "init"},
    "truncation": {"m_cap", "tail_tol"},
}


class _Checker:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path

    def line(self, *keys) -> int | None:
        """Line of the last key in ``keys``, following the nesting left to right."""
        pos = 0
        found = None
        for k in keys:
            i = self.text.find(json.dumps(k), pos)
            if i < 0:
                break
            pos = i
            found = i
        if found is None:
            return None
        return self.text.count("\n", 0, found) + 1

    def fail(self, message: str, *keys):
        raise ConfigError(message, self.line(*keys) if keys else None, self.path)

    def number(self, value, *keys, integer=False, positive=False, nonneg=False):
        ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
        if isinstance(value, bool) or not ok_type:
            self.fail(f"{'.'.join(keys)} must be {'an integer' if integer else 'a number'}", *keys)
        if not math.isfinite(value):
            self.fail(f"{'.'.join(keys)} must be finite", *keys)
        if positive and not value > 0:
            self.fail(f"{'.'.join(keys)} must be positive", *keys)
        if nonneg and value < 0:
            self.fail(f"{'.'.join(keys)} must be non-negative", *keys)
        return value

    def beta(self, value, key):
        self.number(value, "model", key)
        if not 0 < value < 1:
            self.fail(f"beta out of (0,1): model.{key} = {value}", "model", key)
        return float(value)


def _model(chk: _Checker, raw) -> ModelConfig:
    if not isinstance(raw, dict):
        chk.fail("model must be an object", "model")
    kind = raw.get("kind")
    if kind not in KINDS:
        chk.fail(f"model.kind must be one of {', '.join(KINDS)}", "model", "kind")
    if "N" not in raw:
        chk.fail("model.N is required", "model")
    n = chk.number(raw["N"], "model", "N", integer=True, positive=True)
    closed = raw.get("closed", False)
    if not isinstance(closed, bool):
        chk.fail("model.closed must be true or false", "model", "closed")
    if kind == "levy":
        for key in ("beta_left", "beta_right", "s"):
            if key in raw:
                chk.fail(f"model.{key} does not apply to a levy model", "model", key)
        if closed:
            chk.fail("levy models are open", "model", "closed")
        lams = []
        for key in ("lambda_left", "lambda_right"):
            if key not in raw:
                chk.fail(f"levy model requires model.{key}", "model")
            lams.append(float(chk.number(raw[key], "model", key, positive=True)))
        return ModelConfig(kind, n, lambda_left=lams[0], lambda_right=lams[1])
    for key in ("lambda_left", "lambda_right"):
        if key in raw:
            chk.fail(f"model.{key} only applies to a levy model", "model", key)
    if kind == "spin_half":
        s = Fraction(1, 2)
        if "s" in raw and Fraction(str(raw["s"])) != s:
            chk.fail("spin_half models have s = 1/2", "model", "s")
    else:
        if "s" not in raw:
            chk.fail("spin_s model requires model.s", "model")
        s = Fraction(str(chk.number(raw["s"], "model", "s", positive=True)))
    if closed:
        for key in ("beta_left", "beta_right"):
            if key in raw:
                chk.fail("closed chains take no reservoir parameters", "model", key)
        return ModelConfig(kind, n, s, closed=True)
    betas = []
    for key in ("beta_left", "beta_right"):
        if key not in raw:
            chk.fail(f"open chain requires model.{key}", "model")
        betas.append(chk.beta(raw[key], key))
    return ModelConfig(kind, n, s, betas[0], betas[1])


def _sim(chk: _Checker, raw, n_sites: int) -> SimConfig:
    if not isinstance(raw, dict):
        chk.fail("sim must be an object", "sim")
    d = SimConfig()
    horizon = float(chk.number(raw.get("horizon", d.horizon), "sim", "horizon", positive=True))
    n_traj = chk.number(raw.get("n_traj", d.n_traj), "sim", "n_traj", integer=True, positive=True)
    seed = chk.number(raw.get("seed", d.seed), "sim", "seed", integer=True, nonneg=True)
    if seed >= 2**64:
        chk.fail("sim.seed must fit in 64 bits", "sim", "seed")
    burn_in = float(chk.number(raw.get("burn_in", min(d.burn_in, horizon / 10)), "sim", "burn_in", nonneg=True))
    if not burn_in < horizon:
        chk.fail("sim.burn_in must be smaller than sim.horizon", "sim", "burn_in")
    eps = float(chk.number(raw.get("epsilon", d.epsilon), "sim", "epsilon", positive=True))
    init = raw.get("init")
    if init is not None:
        if not isinstance(init, list) or len(init) != n_sites:
            chk.fail(f"sim.init must be a list of {n_sites} numbers", "sim", "init")
        for x in init:
            chk.number(x, "sim", "init", nonneg=True)
        init = tuple(init)
    return SimConfig(horizon, n_traj, seed, burn_in, eps, init)


def _truncation(chk: _Checker, raw) -> TruncationConfig:
    if not isinstance(raw, dict):
        chk.fail("truncation must be an object", "truncation")
    d = TruncationConfig()
    m_cap = chk.number(raw.get("m_cap", d.m_cap), "truncation", "m_cap", integer=True, positive=True)
    tol = float(chk.number(raw.get("tail_tol", d.tail_tol), "truncation", "tail_tol", positive=True))
    return TruncationConfig(m_cap, tol)


def _checks(chk: _Checker, raw) -> tuple:
    if not isinstance(raw, list):
        chk.fail("checks must be a list", "checks")
    out = []
    for item in raw:
        if isinstance(item, str):
            name, params = item, {}
        elif isinstance(item, dict):
            extra = set(item) - {"name", "params"}
            if extra:
                chk.fail(f"unknown key {sorted(extra)[0]!r} in checks entry", "checks", sorted(extra)[0])
            name, params = item.get("name"), item.get("params", {})
            if not isinstance(params, dict):
                chk.fail("checks[].params must be an object", "checks", "params")
        else:
            chk.fail("checks entries must be names or {name, params} objects", "checks")
        if name not in SUITES:
            chk.fail(f"unknown check {name!r}; expected one of {', '.join(SUITES)}", "checks", name if isinstance(name, str) else "checks")
        out.append(CheckRequest(name, dict(params)))
    return tuple(out)


def load_config(data: dict, text: str | None = None, path: str | None = None) -> RunConfig:
    """Validate an already decoded config; ``text`` is only used for line numbers."""
    chk = _Checker(text if text is not None else json.dumps(data, indent=2), path)
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", 1, path)
    for key in data:
        if key not in ("model", "sim", "truncation", "checks"):
            chk.fail(f"unknown key {key!r}", key)
    for sect, allowed in _SECTIONS.items():
        body = data.get(sect, {})
        if isinstance(body, dict):
            for key in body:
                if key not in allowed:
                    chk.fail(f"unknown key {sect}.{key}", sect, key)
    if "model" not in data:
        chk.fail("model section is required")
    model = _model(chk, data["model"])
    sim = _sim(chk, data.get("sim", {}), model.N)
    trunc = _truncation(chk, data.get("truncation", {}))
    checks = _checks(chk, data.get("checks", []))
    return RunConfig(model, sim, trunc, checks, path)


def parse_config(path) -> RunConfig:
    """Read and validate a JSON config file, filling in defaults."""
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", None, path) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, path) from exc
    return load_config(data, text, path)
