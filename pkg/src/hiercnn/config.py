"""Run configuration: INI-style ``key = value`` sections.

Defaults: 1400 features, windows 3/4/5 with 100 maps, dropout 0.5,
147 epochs, batch 75, 10 folds, 80/10/10 split.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import InvalidConfig
from .textcnn import TextCnnConfig

NODES = ("flat", "parent", "binary", "multi")
_NODE_KEYS = {name: i + 1 for i, name in enumerate(NODES)}


@dataclass
class PrepConfig:
    k_features: int = 1400
    min_count: int = 12
    max_count: int = 111
    always_include: tuple[str, ...] = ("8500/3",)
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_len: int = 0
    max_len_percentile: float = 95.0
    afrikaans_threshold: float = 0.05
    en_stopwords: str = ""
    af_stopwords: str = ""


@dataclass
class EvalConfig:
    folds: int = 10
    bootstrap: int = 1000
    alpha: float = 0.05
    macro_over: str = "all"
    fallback: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    prep: PrepConfig = field(default_factory=PrepConfig)
    model: dict[str, str] = field(default_factory=dict)
    node_overrides: dict[str, dict[str, str]] = field(default_factory=dict)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def node_config(self, node: str, num_classes: int, max_len: int) -> TextCnnConfig:
        """Model settings for one node: ``[model]`` then ``[model.<node>]``."""
        if node not in NODES:
            raise InvalidConfig(f"unknown node {node!r}")
        settings = dict(self.model)
        settings.update(self.node_overrides.get(node, {}))
        cfg = TextCnnConfig.from_mapping(settings)
        if "seed" not in settings:
            seed = int(np.random.SeedSequence([self.seed, _NODE_KEYS[node]]).generate_state(1)[0])
            cfg = replace(cfg, seed=seed)
        return replace(cfg, num_classes=num_classes, max_len=max_len)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    def dumps(self) -> str:
        parser = configparser.ConfigParser()
        parser["run"] = {"seed": str(self.seed)}
        parser["prep"] = {f.name: _fmt(getattr(self.prep, f.name)) for f in fields(PrepConfig)}
        parser["model"] = dict(self.model)
        for node, values in self.node_overrides.items():
            parser[f"model.{node}"] = dict(values)
        parser["eval"] = {f.name: _fmt(getattr(self.eval, f.name)) for f in fields(EvalConfig)}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(cls, section) -> object:
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    for key, raw in section.items():
        if key not in known:
            raise InvalidConfig(f"unknown setting {key!r} in [{section.name}]")
        current = getattr(defaults, key)
        try:
            if isinstance(current, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(current, tuple):
                items = [x.strip() for x in raw.split(",") if x.strip()]
                kwargs[key] = tuple(float(x) for x in items) if key == "split" else tuple(items)
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        except ValueError as exc:
            raise InvalidConfig(f"bad value for {key}: {raw!r}") from exc
    return cls(**kwargs)


def loads_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(default_section="__defaults__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(str(exc)) from exc
    cfg = RunConfig()
    if parser.has_section("run"):
        try:
            cfg.seed = int(parser["run"].get("seed", "0"))
        except ValueError as exc:
            raise InvalidConfig("seed must be an integer") from exc
    if parser.has_section("prep"):
        cfg.prep = _coerce(PrepConfig, parser["prep"])
    if parser.has_section("eval"):
        cfg.eval = _coerce(EvalConfig, parser["eval"])
    model_keys = {f.name for f in fields(TextCnnConfig)}
    for section in parser.sections():
        if section == "model" or section.startswith("model."):
            values = dict(parser[section].items())
            unknown = set(values) - model_keys
            if unknown:
                raise InvalidConfig(f"unknown model settings {sorted(unknown)} in [{section}]")
            if section == "model":
                cfg.model = values
            else:
                node = section.split(".", 1)[1]
                if node not in NODES:
                    raise InvalidConfig(f"unknown model node [{section}]")
                cfg.node_overrides[node] = values
    if cfg.eval.macro_over not in ("all", "present"):
        raise InvalidConfig("macro_over must be 'all' or 'present'")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads_config(fh.read())
    except FileNotFoundError as exc:
        raise InvalidConfig(f"config file not found: {path}") from exc


def reduced_model_settings(epochs: int = 40, embedding_dim: int = 32) -> dict[str, str]:
    """Desk-scale model settings used for quick end-to-end runs."""
    return {"epochs": str(epochs), "embedding_dim": str(embedding_dim)}
