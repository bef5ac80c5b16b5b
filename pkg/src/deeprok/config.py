"""Flat ``key = value`` run configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, and optional
``[section]`` headers group keys. Keys are unique across sections, so a
header is only organizational; a key placed under the wrong header is
rejected. Lists are comma separated. Every key is optional and defaults to
the standard experiment settings.

Example::

    agent = deep_rok
    seed = 3

    [train]
    episodes = 700

    [eval]
    sweep_pole_lengths = 0.2, 0.6, 1.0, 1.4
"""

from dataclasses import dataclass, field, replace

from .agents import AGENT_KINDS, TrainConfig
from .cartpole import CartPoleParams, ParamRanges
from .ekf import BATCH_MODES
from .evaluation import DEFAULT_CART_MASSES, DEFAULT_POLE_LENGTHS
from .nn_core import INIT_SCHEMES


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 500
    epsilon: float = 0.1
    pole_lengths: tuple = DEFAULT_POLE_LENGTHS
    cart_masses: tuple = DEFAULT_CART_MASSES


@dataclass(frozen=True)
class PathsConfig:
    checkpoint: str = "checkpoint.bin"
    train_log: str = "train_log.csv"
    report: str = "sweep.csv"
    eval_csv: str = "eval.csv"


@dataclass(frozen=True)
class RunConfig:
    agent: str = "deep_rok"
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def train_config(self):
        return replace(self.train, seed=self.seed)


def _int(lo=None, hi=None):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
        _bounds(v, lo, hi)
        return v
    return conv


def _float(lo=None, hi=None, lo_open=False, hi_open=False):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("value must be finite")
        _bounds(v, lo, hi, lo_open, hi_open)
        return v
    return conv


def _bounds(v, lo, hi, lo_open=False, hi_open=False):
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ValueError(f"value {v} out of range: must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ValueError(f"value {v} out of range: must be {'<' if hi_open else '<='} {hi}")


def _bool(text):
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return conv


def _list(item):
    def conv(text):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("expected a non-empty comma-separated list")
        return tuple(item(p) for p in parts)
    return conv


def _str(text):
    if not text:
        raise ValueError("expected a non-empty value")
    return text


# key -> (section, converter)
SCHEMA = {
    "agent": ("run", _choice(AGENT_KINDS)),
    "seed": ("run", _int(0)),
    "episodes": ("train", _int(0)),
    "batch_size": ("train", _int(1)),
    "gamma": ("train", _float(0.0, 1.0, hi_open=True)),
    "epsilon_start": ("train", _float(0.0, 1.0)),
    "epsilon_end": ("train", _float(0.0, 1.0)),
    "epsilon_decay_episodes": ("train", _int(0)),
    "target_sync_interval": ("train", _int(1)),
    "replay_capacity": ("train", _int(1)),
    "replay_min": ("train", _int(1)),
    "adam_learning_rate": ("train", _float(0.0)),
    "ekf_learning_rate": ("train", _float(0.0)),
    "max_episode_steps": ("train", _int(1)),
    "init_scale": ("train", _float(0.0)),
    "init_scheme": ("train", _choice(INIT_SCHEMES)),
    "failure_reward": ("train", _float()),
    "hidden_dims": ("train", _list(_int(1))),
    "nominal_cart_mass": ("env", _float(0.0, lo_open=True)),
    "nominal_pole_length": ("env", _float(0.0, lo_open=True)),
    "pole_length_min": ("env", _float(0.0, lo_open=True)),
    "pole_length_max": ("env", _float(0.0, lo_open=True)),
    "cart_mass_min": ("env", _float(0.0, lo_open=True)),
    "cart_mass_max": ("env", _float(0.0, lo_open=True)),
    "k_candidates": ("env", _int(1)),
    "cross_product": ("env", _bool),
    "p0_scale": ("ekf", _float(0.0, lo_open=True)),
    "pv_scale": ("ekf", _float(0.0)),
    "pn": ("ekf", _float(0.0, lo_open=True)),
    "ekf_batch_mode": ("ekf", _choice(BATCH_MODES)),
    "psd_check_interval": ("ekf", _int(0)),
    "eval_episodes": ("eval", _int(1)),
    "eval_epsilon": ("eval", _float(0.0, 1.0)),
    "sweep_pole_lengths": ("eval", _list(_float(0.0, lo_open=True))),
    "sweep_cart_masses": ("eval", _list(_float(0.0, lo_open=True))),
    "checkpoint": ("paths", _str),
    "train_log": ("paths", _str),
    "report": ("paths", _str),
    "eval_csv": ("paths", _str),
}
SECTIONS = ("run", "train", "env", "ekf", "eval", "paths")


def _tokenize(text):
    """Yield ``(key, raw_value, line_no)``."""
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=no)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", line=no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key=key, line=no)
        if section is not None and SCHEMA[key][0] != section:
            raise ConfigError(f"key belongs to [{SCHEMA[key][0]}], not [{section}]", key=key,
                              line=no)
        yield key, value, no


def parse_config(text="", overrides=None):
    """Parse and validate a run configuration; missing keys take defaults.

    ``overrides`` maps keys to raw string values that replace whatever the
    text sets (used for command-line ``--set key=value``).
    """
    values = {}
    lines = {}
    for key, raw, no in _tokenize(text):
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=no)
        try:
            values[key] = SCHEMA[key][1](raw)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=no) from None
        lines[key] = no
    for key, raw in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError("unknown key in override", key=key)
        try:
            values[key] = SCHEMA[key][1](str(raw).strip())
        except ValueError as exc:
            raise ConfigError(f"{exc} in override", key=key) from None
        lines.pop(key, None)

    def err(msg, key):
        return ConfigError(msg, key=key, line=lines.get(key))

    d = TrainConfig()
    nominal = CartPoleParams(values.get("nominal_cart_mass", d.nominal.cart_mass),
                             values.get("nominal_pole_length", d.nominal.pole_length))
    try:
        ranges = ParamRanges(values.get("pole_length_min", d.ranges.pole_length_min),
                             values.get("pole_length_max", d.ranges.pole_length_max),
                             values.get("cart_mass_min", d.ranges.cart_mass_min),
                             values.get("cart_mass_max", d.ranges.cart_mass_max))
    except ValueError as exc:
        key = next((k for k in ("pole_length_max", "pole_length_min", "cart_mass_max",
                                "cart_mass_min") if k in values), "pole_length_min")
        raise err(str(exc), key) from None

    train_keys = {f for f in TrainConfig.__dataclass_fields__} - {"nominal", "ranges", "seed"}
    train = replace(d, nominal=nominal, ranges=ranges,
                    **{k: v for k, v in values.items() if k in train_keys})
    if train.replay_min < train.batch_size:
        raise err("replay_min must be >= batch_size", "replay_min")
    if train.replay_min > train.replay_capacity:
        raise err("replay_min must be <= replay_capacity", "replay_min")

    e = EvalConfig()
    evalc = EvalConfig(values.get("eval_episodes", e.episodes),
                       values.get("eval_epsilon", e.epsilon),
                       values.get("sweep_pole_lengths", e.pole_lengths),
                       values.get("sweep_cart_masses", e.cart_masses))
    p = PathsConfig()
    paths = PathsConfig(**{f: values.get(f, getattr(p, f)) for f in p.__dataclass_fields__})
    cfg = RunConfig(values.get("agent", "deep_rok"), values.get("seed", 0), train, evalc, paths)
    try:
        cfg.train_config().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path=None, overrides=None):
    if path is None:
        return parse_config("", overrides)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg):
    """Render every resolved setting in the same format :func:`parse_config` reads."""
    t = cfg.train
    resolved = {
        "agent": cfg.agent, "seed": cfg.seed,
        "nominal_cart_mass": t.nominal.cart_mass, "nominal_pole_length": t.nominal.pole_length,
        "pole_length_min": t.ranges.pole_length_min, "pole_length_max": t.ranges.pole_length_max,
        "cart_mass_min": t.ranges.cart_mass_min, "cart_mass_max": t.ranges.cart_mass_max,
        "eval_episodes": cfg.eval.episodes, "eval_epsilon": cfg.eval.epsilon,
        "sweep_pole_lengths": cfg.eval.pole_lengths, "sweep_cart_masses": cfg.eval.cart_masses,
    }
    for k in SCHEMA:
        if k not in resolved:
            src = cfg.paths if SCHEMA[k][0] == "paths" else t
            resolved[k] = getattr(src, k)
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        out.extend(f"{k} = {_fmt(resolved[k])}" for k, (s, _) in SCHEMA.items() if s == section)
        out.append("")
    return "\n".join(out)
