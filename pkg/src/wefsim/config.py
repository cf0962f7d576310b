"""INI experiment configs.

Sections and defaults::

    [experiment]  rounds=50 num_clients=10 free_rider_ratio=0.0 master_seed=0
                  snapshot_rounds= workers=1
    [model]       hidden=32
    [train]       learning_rate=0.02 momentum=0.5 batch_size=32 local_epochs=3
    [attack]      kind=stochastic_perturbation weight_range=0.001 sigma=0.001
                  sigma_schedule=0.001,0.0001,1e-05 adaptive_delta_base=true
    [data]        path= n_samples=5000 n_features=86 n_informative=8
                  separation=4.0 normalize=true test_fraction=0.2
                  distribution=iid beta=0.5
    [defense]     epsilon=0.05 mode=wef_defense

Missing keys take their default. Unknown sections or keys are rejected,
except ``[manifest]``, which run directories add and parsing ignores.
Floats are written with ``repr`` so parse -> serialize -> parse is exact.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import fields, replace

from .errors import ConfigError, PreconditionError
from .sim import ExperimentConfig

IGNORED_SECTIONS = ("manifest",)

_EXPERIMENT_KEYS = ("rounds", "num_clients", "free_rider_ratio", "master_seed",
                    "snapshot_rounds", "workers")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str) -> str | None:
    return text.strip() or None


# section -> key -> parser
_PARSERS = {
    "experiment": {"rounds": int, "num_clients": int, "free_rider_ratio": float,
                   "master_seed": int, "snapshot_rounds": _int_tuple, "workers": int},
    "model": {"hidden": _int_tuple},
    "train": {"learning_rate": float, "momentum": float, "batch_size": int,
              "local_epochs": int},
    "attack": {"kind": str.strip, "weight_range": float, "sigma": float,
               "sigma_schedule": _float_tuple, "adaptive_delta_base": _bool},
    "data": {"path": _opt_str, "n_samples": int, "n_features": int, "n_informative": int,
             "separation": float, "normalize": _bool, "test_fraction": float,
             "distribution": str.strip, "beta": float},
    "defense": {"epsilon": float, "mode": str.strip},
}


def _locate(text: str, section: str | None, key: str | None = None) -> int | None:
    """1-based line of ``[section]`` or of ``key`` inside it."""
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k.lower() == key:
                return n
    return None


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text into a validated ExperimentConfig.

    Errors carry the line number of the offending key where one exists.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any section", e.lineno) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("malformed line", lineno) from None

    values: dict[str, dict[str, object]] = {}
    for section in cp.sections():
        if section in IGNORED_SECTIONS:
            continue
        if section not in _PARSERS:
            raise ConfigError(f"unknown section [{section}]", _locate(text, section))
        values[section] = {}
        for key, raw in cp.items(section):
            parser = _PARSERS[section].get(key)
            if parser is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]",
                                  _locate(text, section, key))
            try:
                values[section][key] = parser(raw)
            except ValueError as e:
                raise ConfigError(f"[{section}] {key}: {e}", _locate(text, section, key)) from None

    try:
        cfg = _build(values)
    except PreconditionError as e:
        raise ConfigError(str(e), _guess_line(text, str(e))) from None
    try:
        cfg.validate()
    except ConfigError as e:
        if e.line is None:
            raise ConfigError(str(e), _guess_line(text, str(e))) from None
        raise
    return cfg


def _guess_line(text: str, message: str) -> int | None:
    # validation messages lead with the offending key; anchor to the earliest one named
    hits = []
    for section, keys in _PARSERS.items():
        for key in keys:
            m = re.search(rf"\b{key}\b", message)
            line = _locate(text, section, key) if m else None
            if line is not None:
                hits.append((m.start(), line))
    return min(hits)[1] if hits else None


def _build(values: dict[str, dict[str, object]]) -> ExperimentConfig:
    base = ExperimentConfig()
    exp = values.get("experiment", {})
    model = values.get("model", {})
    attack = replace(base.attack, **values.get("attack", {}))
    train = replace(base.train, **values.get("train", {}))
    data = replace(base.data, **values.get("data", {}))
    defense = replace(base.defense, **values.get("defense", {}))
    return replace(base, train=train, attack=attack, data=data, defense=defense,
                   **{k: exp[k] for k in _EXPERIMENT_KEYS if k in exp},
                   **({"hidden": model["hidden"]} if "hidden" in model else {}))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_sections(cfg: ExperimentConfig) -> dict[str, dict[str, str]]:
    """Every config field as formatted strings, grouped by section."""
    out = {"experiment": {k: _format_value(getattr(cfg, k)) for k in _EXPERIMENT_KEYS},
           "model": {"hidden": _format_value(cfg.hidden)}}
    for name, obj in (("train", cfg.train), ("attack", cfg.attack), ("data", cfg.data),
                      ("defense", cfg.defense)):
        out[name] = {f.name: _format_value(getattr(obj, f.name)) for f in fields(obj)
                     if f.name in _PARSERS[name]}
    return out


def serialize_config(cfg: ExperimentConfig, extra: dict[str, dict[str, str]] | None = None) -> str:
    sections = config_sections(cfg)
    if extra:
        sections.update(extra)
    chunks = []
    for name, kv in sections.items():
        lines = [f"[{name}]"] + [f"{k} = {v}".rstrip() for k, v in kv.items()]
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"

