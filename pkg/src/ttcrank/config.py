"""Run configuration: an INI file with sections, overridden by CLI flags.

Example::

    [provider]
    backend = synthetic
    native_dim = 384

    [run]
    tasks = data/needle-0, data/needle-1
    programs = frontier
    output = out/
    seed = 0

    [search]
    generations = 10
    proposer = replay
    replay_dir = proposals/
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .encoder import ENDPOINT_ENV, ProviderConfig

SEED_ENV = "TTC_SEED"
PROPOSERS = ("replay", "command", "http")
GAINS = ("exponential", "linear")


@dataclass(frozen=True)
class SearchSettings:
    generations: int = 1
    proposer: str = "replay"
    replay_dir: Optional[str] = None
    command: Optional[str] = None
    url: Optional[str] = None
    timeout: float = 120.0

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.proposer not in PROPOSERS:
            raise ValueError(f"proposer must be one of {', '.join(PROPOSERS)}")


@dataclass(frozen=True)
class RunConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    tasks: tuple[str, ...] = ()
    programs: str = "frontier"  # "frontier", "all", comma-separated ids, or a .ttc path
    output: str = "out"
    seed: int = 0
    gain: str = "exponential"
    k: int = 10
    resamples: int = 10_000
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    search: SearchSettings = field(default_factory=SearchSettings)

    def __post_init__(self):
        if self.gain not in GAINS:
            raise ValueError(f"gain must be one of {', '.join(GAINS)}")
        if self.k < 1 or self.resamples < 1 or self.threads < 1:
            raise ValueError("k, resamples and threads must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tasks"] = list(self.tasks)
        return d

    def hash(self) -> str:
        """Digest of everything that can change outputs (not paths or thread count)."""
        d = self.to_dict()
        for key in ("output", "threads"):
            d.pop(key)
        d["provider"].pop("cache_path")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(cls, section: configparser.SectionProxy) -> dict:
    out = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key not in types:
            raise ValueError(f"[{section.name}] unknown key {key!r}")
        t = str(types[key])
        if "bool" in t:
            out[key] = section.getboolean(key)
        elif "int" in t and "float" not in t:
            out[key] = int(raw)
        elif "float" in t:
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


def _split_list(raw: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in raw.replace("\n", ",").split(",") if p.strip())


def load_config(path=None, env=None) -> RunConfig:
    """Read ``path`` (optional) and apply environment overrides."""
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        cp.read_string(text, source=str(path))
    unknown = set(cp.sections()) - {"provider", "run", "search"}
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")

    prov = _coerce(ProviderConfig, cp["provider"]) if cp.has_section("provider") else {}
    search = _coerce(SearchSettings, cp["search"]) if cp.has_section("search") else {}
    run: dict = {}
    if cp.has_section("run"):
        sec = cp["run"]
        for key in sec:
            if key == "tasks":
                run["tasks"] = _split_list(sec[key])
            elif key in ("seed", "k", "resamples", "threads"):
                run[key] = sec.getint(key)
            elif key in ("programs", "output", "gain"):
                run[key] = sec[key]
            else:
                raise ValueError(f"[run] unknown key {key!r}")

    if env.get(ENDPOINT_ENV):
        prov["endpoint"] = env[ENDPOINT_ENV]
    if env.get(SEED_ENV):
        run["seed"] = int(env[SEED_ENV])
    return RunConfig(provider=ProviderConfig(**prov), search=SearchSettings(**search), **run)


def apply_overrides(config: RunConfig, **flags) -> RunConfig:
    """CLI flags win over file and environment; ``None`` means not given."""
    flags = {k: v for k, v in flags.items() if v is not None}
    prov = {k[len("provider_"):]: flags.pop(k) for k in list(flags) if k.startswith("provider_")}
    search = {k[len("search_"):]: flags.pop(k) for k in list(flags) if k.startswith("search_")}
    if "tasks" in flags:
        flags["tasks"] = tuple(flags["tasks"])
    if prov:
        flags["provider"] = dataclasses.replace(config.provider, **prov)
    if search:
        flags["search"] = dataclasses.replace(config.search, **search)
    return dataclasses.replace(config, **flags)
