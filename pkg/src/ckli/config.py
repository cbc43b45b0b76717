"""Declarative experiment configuration (TOML)."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .kernels import KernelSpec

METHODS = ("cKLI", "cKLI-theta", "MAP", "binary")
_METHOD_ALIASES = {"ckli": "cKLI", "ckli-theta": "cKLI-theta", "ckli-θ": "cKLI-theta", "map": "MAP", "binary": "binary"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BinarySettings:
    y1: float = 0.0
    y2: float = -2.302585092994046
    epsilon: float = 1.0 / 30.0
    reference_epsilon: float = 0.0
    n_xi: int = 100
    n_eta: int = 900


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    nx: int = 32
    ny: int = 32
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("Gaussian", 1.0, 0.2))
    n_y_obs: int = 50
    n_u_obs: int = 50
    n_xi: int = 100
    n_eta: int = 100
    n_ens: int = 5000
    gamma: float = 1e-6
    max_iters: int = 100
    grad_tol: float = 1e-9
    optimizer: str = "GaussNewton"
    subsample_factor: int = 1
    map_gamma: float = 1e-6
    map_max_iters: int = 200
    map_optimizer: str = "GaussNewton"
    fit_starts: int = 8
    methods: tuple = ("cKLI", "cKLI-theta", "MAP")
    replicas: int = 10
    seed: int = 0
    binary: BinarySettings = field(default_factory=BinarySettings)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        d["methods"] = list(self.methods)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def run_id(self) -> str:
        return f"{self.name}-{self.config_hash()[:10]}"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


# (section, key) -> (field name, type)
_LAYOUT = {
    ("", "name"): ("name", str),
    ("", "methods"): ("methods", list),
    ("grid", "nx"): ("nx", int),
    ("grid", "ny"): ("ny", int),
    ("observations", "n_y"): ("n_y_obs", int),
    ("observations", "n_u"): ("n_u_obs", int),
    ("pickle", "n_xi"): ("n_xi", int),
    ("pickle", "n_eta"): ("n_eta", int),
    ("pickle", "gamma"): ("gamma", float),
    ("pickle", "max_iters"): ("max_iters", int),
    ("pickle", "grad_tol"): ("grad_tol", float),
    ("pickle", "optimizer"): ("optimizer", str),
    ("pickle", "subsample_factor"): ("subsample_factor", int),
    ("ensemble", "n_ens"): ("n_ens", int),
    ("map", "gamma"): ("map_gamma", float),
    ("map", "max_iters"): ("map_max_iters", int),
    ("map", "optimizer"): ("map_optimizer", str),
    ("fit", "starts"): ("fit_starts", int),
    ("run", "replicas"): ("replicas", int),
    ("run", "seed"): ("seed", int),
}
_KERNEL_KEYS = {"family": str, "sigma": float, "length": float}
_BINARY_KEYS = {"y1": float, "y2": float, "epsilon": float, "reference_epsilon": float, "n_xi": int, "n_eta": int}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return lineno
    return None


def _section_line(text: str, section: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m and m.group(1).strip() == section:
            return lineno
    return None


def _where(path, text, section, key):
    line = _line_of(text, section, key)
    dotted = f"{section}.{key}" if section else key
    return f"{path}:{line}: {dotted}" if line else f"{path}: {dotted}"


def _coerce(value, typ, where):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return value
    if not isinstance(value, typ) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def parse_config(text: str, path="<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kw = {}
    known_sections = {"grid", "observations", "pickle", "ensemble", "map", "fit", "run", "kernel", "binary"}
    for top, val in raw.items():
        if isinstance(val, dict):
            if top not in known_sections:
                raise ConfigError(f"{path}:{_section_line(text, top) or '?'}: unknown section [{top}]")
            continue
        if ("", top) not in _LAYOUT:
            raise ConfigError(f"{_where(path, text, '', top)}: unknown key")
    for (section, key), (name, typ) in _LAYOUT.items():
        holder = raw if section == "" else raw.get(section, {})
        if key in holder:
            kw[name] = _coerce(holder[key], typ, _where(path, text, section, key))
    for section in known_sections - {"kernel", "binary"}:
        for key in raw.get(section, {}):
            if (section, key) not in _LAYOUT:
                raise ConfigError(f"{_where(path, text, section, key)}: unknown key")

    if "kernel" in raw:
        kraw = raw["kernel"]
        for key in kraw:
            if key not in _KERNEL_KEYS:
                raise ConfigError(f"{_where(path, text, 'kernel', key)}: unknown key")
        vals = {k: _coerce(kraw[k], t, _where(path, text, "kernel", k)) for k, t in _KERNEL_KEYS.items() if k in kraw}
        try:
            kw["kernel"] = KernelSpec(vals.get("family", "Gaussian"), vals.get("sigma", 1.0), vals.get("length", 0.2))
        except ValueError as exc:
            bad = next((k for k in ("family", "sigma", "length") if k in str(exc)), "family")
            raise ConfigError(f"{_where(path, text, 'kernel', bad)}: {exc}") from None
    if "binary" in raw:
        braw = raw["binary"]
        for key in braw:
            if key not in _BINARY_KEYS:
                raise ConfigError(f"{_where(path, text, 'binary', key)}: unknown key")
        vals = {k: _coerce(braw[k], t, _where(path, text, "binary", k)) for k, t in _BINARY_KEYS.items() if k in braw}
        kw["binary"] = BinarySettings(**vals)
    if "methods" in kw:
        methods = []
        for m in kw["methods"]:
            canon = _METHOD_ALIASES.get(str(m).lower())
            if canon is None:
                raise ConfigError(f"{_where(path, text, '', 'methods')}: unknown method {m!r}; choose from {METHODS}")
            methods.append(canon)
        kw["methods"] = tuple(methods)
    cfg = ExperimentConfig(**kw)
    validate(cfg, text, path)
    return cfg


def validate(cfg: ExperimentConfig, text: str = "", path="<config>") -> None:
    checks = [
        (cfg.nx >= 2, "grid", "nx", "must be at least 2"),
        (cfg.ny >= 2, "grid", "ny", "must be at least 2"),
        (0 <= cfg.n_y_obs <= cfg.nx * cfg.ny, "observations", "n_y", "must lie in [0, number of cells]"),
        (0 <= cfg.n_u_obs <= cfg.nx * cfg.ny, "observations", "n_u", "must lie in [0, number of cells]"),
        (cfg.n_xi >= 1, "pickle", "n_xi", "must be positive"),
        (cfg.n_eta >= 1, "pickle", "n_eta", "must be positive"),
        (cfg.gamma > 0, "pickle", "gamma", "must be positive"),
        (cfg.grad_tol > 0, "pickle", "grad_tol", "must be positive"),
        (cfg.max_iters >= 1, "pickle", "max_iters", "must be positive"),
        (cfg.optimizer in ("GaussNewton", "LBFGS"), "pickle", "optimizer", "must be GaussNewton or LBFGS"),
        (cfg.subsample_factor >= 1 and cfg.nx % cfg.subsample_factor == 0 and cfg.ny % cfg.subsample_factor == 0,
         "pickle", "subsample_factor", "must divide nx and ny"),
        (cfg.n_ens > max(cfg.n_u_obs, 1), "ensemble", "n_ens", "must exceed the number of state observations"),
        (cfg.map_gamma > 0, "map", "gamma", "must be positive"),
        (cfg.map_optimizer in ("GaussNewton", "LBFGS"), "map", "optimizer", "must be GaussNewton or LBFGS"),
        (cfg.fit_starts >= 1, "fit", "starts", "must be positive"),
        (cfg.replicas >= 1, "run", "replicas", "must be positive"),
        (len(cfg.methods) > 0, "", "methods", "must list at least one method"),
        (cfg.binary.y1 > cfg.binary.y2, "binary", "y1", "must exceed y2"),
        (cfg.binary.epsilon > 0, "binary", "epsilon", "must be positive"),
        (cfg.binary.reference_epsilon >= 0, "binary", "reference_epsilon", "must be nonnegative"),
    ]
    for ok, section, key, msg in checks:
        if not ok:
            raise ConfigError(f"{_where(path, text, section, key)} {msg}")
    if ("cKLI-theta" in cfg.methods) and cfg.n_y_obs < 3:
        raise ConfigError(f"{_where(path, text, 'observations', 'n_y')} cKLI-theta needs at least 3 observations")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """TOML text that round-trips through :func:`parse_config`."""
    k = cfg.kernel
    b = cfg.binary
    methods = ", ".join(f'"{m}"' for m in cfg.methods)
    return f"""name = "{cfg.name}"
methods = [{methods}]

[grid]
nx = {cfg.nx}
ny = {cfg.ny}

[kernel]
family = "{k.family}"
sigma = {k.sigma!r}
length = {k.length!r}

[observations]
n_y = {cfg.n_y_obs}
n_u = {cfg.n_u_obs}

[pickle]
n_xi = {cfg.n_xi}
n_eta = {cfg.n_eta}
gamma = {cfg.gamma!r}
max_iters = {cfg.max_iters}
grad_tol = {cfg.grad_tol!r}
optimizer = "{cfg.optimizer}"
subsample_factor = {cfg.subsample_factor}

[ensemble]
n_ens = {cfg.n_ens}

[map]
gamma = {cfg.map_gamma!r}
max_iters = {cfg.map_max_iters}
optimizer = "{cfg.map_optimizer}"

[fit]
starts = {cfg.fit_starts}

[binary]
y1 = {b.y1!r}
y2 = {b.y2!r}
epsilon = {b.epsilon!r}
reference_epsilon = {b.reference_epsilon!r}
n_xi = {b.n_xi}
n_eta = {b.n_eta}

[run]
replicas = {cfg.replicas}
seed = {cfg.seed}
"""
