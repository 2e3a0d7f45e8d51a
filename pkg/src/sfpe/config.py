"""Run configuration: a flat ``[section]`` / ``key = value`` format.

Values are Python-style literals (numbers, quoted strings, lists) plus the
bare words ``true`` and ``false``; ``#`` starts a comment.  Every error names
the offending key and, when it comes from the text, the line number.
"""

from __future__ import annotations

import ast
import hashlib
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .presets import (BlackScholesCall, GaussianSolution, PRESET_NAMES, constant_coeffs,
                      gbm_coeffs, get_preset)
from .problem import ProblemSpec, manufactured_problem
from .weights import QUADRATURES

COMMANDS = ("value", "gradient", "solve", "verify", "converge", "moments")
MODELS = ("linear", "gbm", "trig")
PAYOFFS = ("gaussian", "call", "manufactured")


class ConfigError(ConfigurationError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_real_list(v):
    return isinstance(v, list) and all(_is_real(e) for e in v)


def _is_int_list(v):
    return isinstance(v, list) and all(_is_int(e) for e in v) and len(v) > 0


_CHECKS = {
    "int": (_is_int, "an integer"),
    "real": (_is_real, "a number"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "true or false"),
    "reals": (_is_real_list, "a list of numbers"),
    "ints": (_is_int_list, "a non-empty list of integers"),
}

# section -> key -> type name
SCHEMA = {
    "problem": {"name": "str", "d": "int", "T": "real", "model": "str", "rate": "real",
                "vol": "real", "payoff": "str", "strike": "real", "discount": "real",
                "lam": "real", "kappa": "real"},
    "run": {"command": "str", "t": "real", "x": "reals", "seed": "int", "output": "str",
            "axis": "str", "values": "ints", "q": "real", "rho": "real",
            "horizons": "reals"},
    "mc": {"n_paths": "int", "grid_steps": "int", "quadrature": "str", "antithetic": "bool"},
    "picard": {"depth": "int", "samples_per_level": "ints", "scheme": "str", "budget": "int",
               "quadrature": "str", "grid_steps": "int"},
}
DEFAULT_BUDGET = 10 ** 9
CUSTOM_KEYS = ("model", "rate", "vol", "payoff", "strike", "discount", "lam", "kappa")


@dataclass(frozen=True)
class RunConfig:
    problem: str
    command: str
    t: float
    x: tuple
    seed: int
    output: str = "results"
    d: int | None = None
    custom: dict = field(default_factory=dict)
    n_paths: int = 10_000
    grid_steps: int = 100
    quadrature: str = "left-point"
    antithetic: bool = False
    depth: int = 3
    samples_per_level: tuple = (4, 8, 1000)
    scheme: str = "plain"
    budget: int | None = DEFAULT_BUDGET
    picard_quadrature: str = "randomized-arcsine"
    picard_steps: int = 20
    axis: str = "n_paths"
    values: tuple = (1000, 4000, 16000, 64000)
    q: float = 2.0
    rho: float | None = None
    horizons: tuple | None = None
    base_dir: str = field(default=".", compare=False)

    def digest(self):
        """Short hash of every setting that affects results."""
        data = asdict(self)
        for k in ("output", "base_dir"):
            data.pop(k)
        return hashlib.sha256(repr(sorted(data.items())).encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        data = asdict(self)
        data.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**data)

    def build_problem(self):
        if self.problem not in PRESET_NAMES:
            return custom_problem(self.custom, self.d)
        return get_preset(self.problem, self.d)


def _parse_value(raw, key, line):
    text = raw.strip()
    if text in ("true", "false"):
        return text == "true"
    candidates = [text]
    if "#" in text:
        candidates.append(text.split("#", 1)[0].strip())
    for cand in candidates:
        if cand in ("true", "false"):
            return cand == "true"
        try:
            return ast.literal_eval(cand)
        except (ValueError, SyntaxError):
            continue
    raise ConfigError(f"cannot parse value {text!r}", key, line)


def parse_sections(text):
    """Return ``{section: {key: (value, line)}}``."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            name = line.split("#", 1)[0].strip()
            if not name.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=lineno)
            current = name[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", line=lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", line=lineno)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        if current is None:
            raise ConfigError("key outside of any section", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key in [{current}]", key, lineno)
        if key in sections[current]:
            raise ConfigError("duplicate key", key, lineno)
        parsed = _parse_value(value, key, lineno)
        kind = SCHEMA[current][key]
        if kind == "real" and _is_int(parsed):
            parsed = float(parsed)
        if kind == "reals" and isinstance(parsed, list):
            parsed = [float(v) if _is_int(v) else v for v in parsed]
        check, what = _CHECKS[kind]
        if not check(parsed):
            raise ConfigError(f"expected {what}, got {value!r}", key, lineno)
        sections[current][key] = (parsed, lineno)
    return sections


def parse_config(text, base_dir="."):
    """Parse and validate a run configuration."""
    sections = parse_sections(text)
    flat = {}
    lines = {}
    for sec, items in sections.items():
        for key, (value, line) in items.items():
            flat[(sec, key)] = value
            lines[key] = line

    def need(sec, key):
        if (sec, key) not in flat:
            raise ConfigError(f"missing required key in [{sec}]", key)
        return flat[(sec, key)]

    def fail(key, message):
        raise ConfigError(message, key, lines.get(key))

    problem = need("problem", "name")
    custom = {k: flat[("problem", k)] for k in CUSTOM_KEYS if ("problem", k) in flat}
    if ("problem", "T") in flat:
        custom["T"] = flat[("problem", "T")]
    if problem != "custom" and custom and problem in PRESET_NAMES:
        fail(next(iter(custom)), "custom problem keys need name = \"custom\"")
    if problem not in PRESET_NAMES and problem != "custom":
        path = problem if os.path.isabs(problem) else os.path.join(base_dir, problem)
        if not os.path.isfile(path):
            fail("name", f"{problem!r} is neither a preset ({', '.join(PRESET_NAMES)}) "
                         "nor a readable problem file")
        custom = _problem_file(path)
    kw = dict(problem=problem, custom=custom, base_dir=base_dir,
              command=need("run", "command"), t=need("run", "t"),
              x=tuple(need("run", "x")), seed=need("run", "seed"))
    if kw["command"] not in COMMANDS:
        fail("command", f"unknown command; choose from {', '.join(COMMANDS)}")
    if not 0 <= kw["seed"] < 2 ** 64:
        fail("seed", "seed must be a 64-bit unsigned integer")
    mapping = {("problem", "d"): "d", ("run", "output"): "output", ("mc", "n_paths"): "n_paths",
               ("mc", "grid_steps"): "grid_steps", ("mc", "quadrature"): "quadrature",
               ("mc", "antithetic"): "antithetic", ("picard", "depth"): "depth",
               ("picard", "scheme"): "scheme", ("picard", "budget"): "budget",
               ("picard", "quadrature"): "picard_quadrature",
               ("picard", "grid_steps"): "picard_steps",
               ("run", "axis"): "axis", ("run", "q"): "q", ("run", "rho"): "rho"}
    for src, dst in mapping.items():
        if src in flat:
            kw[dst] = flat[src]
    for src, dst in ((("picard", "samples_per_level"), "samples_per_level"),
                     (("run", "values"), "values"), (("run", "horizons"), "horizons")):
        if src in flat:
            kw[dst] = tuple(flat[src])
    cfg = RunConfig(**kw)
    _validate(cfg, fail)
    return cfg


def _problem_file(path):
    with open(path, encoding="utf-8") as fh:
        sections = parse_sections(fh.read())
    if set(sections) - {"problem"}:
        raise ConfigError(f"problem file {path} may only contain a [problem] section")
    items = {k: v for k, (v, _) in sections.get("problem", {}).items()}
    items.pop("name", None)
    return items


def _validate(cfg, fail):
    try:
        spec = cfg.build_problem()
    except ConfigurationError as exc:
        fail("name", str(exc))
    if not 0 <= cfg.t <= spec.T:
        fail("t", f"t = {cfg.t} outside [0, T] = [0, {spec.T}]")
    if len(cfg.x) != spec.d:
        fail("x", f"x has {len(cfg.x)} components, problem dimension is {spec.d}")
    if cfg.t == spec.T and cfg.command != "solve":
        fail("t", f"command {cfg.command!r} needs t < T")
    for key in ("n_paths", "grid_steps", "depth"):
        if getattr(cfg, key) < 1:
            fail(key, "must be positive")
    if cfg.n_paths < 2:
        fail("n_paths", "need at least two paths")
    if cfg.antithetic and cfg.n_paths % 2:
        fail("antithetic", "antithetic sampling needs an even n_paths")
    if cfg.quadrature not in QUADRATURES:
        fail("quadrature", f"choose from {', '.join(QUADRATURES)}")
    if cfg.picard_quadrature not in QUADRATURES:
        fail("quadrature", f"choose from {', '.join(QUADRATURES)}")
    if cfg.picard_steps < 2:
        fail("grid_steps", "the Picard grid needs at least two steps")
    if cfg.scheme not in ("plain", "multilevel"):
        fail("scheme", "choose plain or multilevel")
    if len(cfg.samples_per_level) < cfg.depth or min(cfg.samples_per_level) < 1:
        fail("samples_per_level", f"need {cfg.depth} positive sample counts")
    if cfg.budget is not None and cfg.budget < 1:
        fail("budget", "must be positive")
    if cfg.axis not in ("n_paths", "grid_steps", "depth"):
        fail("axis", "choose n_paths, grid_steps or depth")
    if any(b <= a for a, b in zip(cfg.values, cfg.values[1:])) or min(cfg.values) < 1:
        fail("values", "must be positive and strictly increasing")
    if cfg.q <= 0:
        fail("q", "must be positive")
    if cfg.rho is not None and cfg.rho < 0:
        fail("rho", "must be nonnegative")
    if cfg.horizons is not None and not all(cfg.t < s <= spec.T for s in cfg.horizons):
        fail("horizons", f"each horizon must lie in (t, T] = ({cfg.t}, {spec.T}]")


def _gaussian(x):
    x = np.asarray(x, float)
    return np.exp(-0.5 * np.sum(x * x, axis=-1))


def custom_problem(keys, d=None):
    """Problem from the closed set of configurable models.

    ``model`` is one of ``linear`` (mu = rate x, sigma = vol I), ``gbm``
    (one-dimensional, mu = rate x, sigma = vol x) or ``trig`` (bounded
    trigonometric drift with the manufactured solution).  ``payoff`` is
    ``gaussian``, ``call`` (strike ``strike`` on the first coordinate) or
    ``manufactured`` (only with ``trig``).  ``discount`` r sets
    f(t, x, a, w) = -r a.
    """
    keys = dict(keys)
    d = keys.pop("d", d)
    model = keys.get("model", "linear")
    if model not in MODELS:
        raise ConfigError(f"unknown model; choose from {', '.join(MODELS)}", "model")
    T = float(keys.get("T", 1.0))
    if T <= 0:
        raise ConfigError("T must be positive", "T")
    if d is None:
        d = 1 if model == "gbm" else 2
    if model == "trig":
        if keys.get("payoff", "manufactured") != "manufactured":
            raise ConfigError("the trig model only supports the manufactured payoff", "payoff")
        kappa = np.zeros(d)
        kappa[0] = keys.get("kappa", 0.3)
        spec, _ = manufactured_problem(d, T=T, lam=keys.get("lam", 0.5), kappa=kappa,
                                       name="custom-trig")
        return spec
    rate = float(keys.get("rate", 0.0))
    vol = float(keys.get("vol", 1.0))
    disc = float(keys.get("discount", 0.0))
    payoff = keys.get("payoff", "gaussian")
    strike = float(keys.get("strike", 1.0))
    if vol <= 0:
        raise ConfigError("vol must be positive", "vol")
    if payoff == "gaussian":
        g = _gaussian
    elif payoff == "call":
        def g(x):
            return np.maximum(np.asarray(x, float)[..., 0] - strike, 0.0)
    else:
        raise ConfigError(f"payoff must be one of {', '.join(PAYOFFS[:2])} for model {model}",
                          "payoff")

    def f(t, x, a, w):
        return -disc * np.asarray(a, float)

    if model == "gbm":
        if d != 1:
            raise ConfigError("the gbm model is one-dimensional", "d")
        sol = BlackScholesCall(T, rate, vol, strike) if payoff == "call" and disc == rate \
            else None
        return ProblemSpec(d=1, T=T, coeffs=gbm_coeffs(rate, vol), f=f, g=g,
                           c=max(2.0 * rate, vol ** 2, 0.0), alpha=0.0,
                           lipschitz_L=abs(disc) or 1.0, growth_p=1.0,
                           growth_c=max(rate, vol ** 2, 0.0), name="custom-gbm", solution=sol)
    sol = GaussianSolution(T, rate, vol ** 2) if payoff == "gaussian" and disc == 0 else None
    return ProblemSpec(d=d, T=T, coeffs=constant_coeffs(d, rate, vol), f=f, g=g,
                       c=max(2.0 * rate, 0.0), alpha=vol ** 2, lipschitz_L=abs(disc) or 1.0,
                       growth_p=1.0, growth_c=max(2.0 * rate, 0.0) + vol ** 2 * d,
                       name="custom-linear", solution=sol)
