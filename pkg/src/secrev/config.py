"""Declarative pipeline configuration.

One TOML (or JSON) file wires every stage: store path, keyword/taxonomy
files, mining criteria, loop hyperparameters, backend descriptors, and the
annotation service.  Secrets never live in the file; ``api_key_env`` names
an environment variable instead.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import toml

from .classify import BackendDescriptor
from .errors import ConfigError
from .loop import LoopConfig
from .miner import MiningCriteria


@dataclass
class PipelineConfig:
    store_path: str = "corpus.db"
    keywords_path: str | None = None
    taxonomy_path: str | None = None
    mining: MiningCriteria | None = None
    loop: LoopConfig = field(default_factory=LoopConfig)
    backends: list[BackendDescriptor] = field(default_factory=list)
    service_host: str = "127.0.0.1"
    service_port: int = 8575
    service_url: str | None = None
    seed: int = 0

    def as_dict(self) -> dict:
        data: dict = {
            "store_path": self.store_path,
            "service": {
                "host": self.service_host,
                "port": self.service_port,
            },
            "seed": self.seed,
            "loop": self.loop.as_dict(),
            "backends": [
                {"id": b.id, "kind": b.kind, **b.config} for b in self.backends
            ],
        }
        if self.keywords_path:
            data["keywords_path"] = self.keywords_path
        if self.taxonomy_path:
            data["taxonomy_path"] = self.taxonomy_path
        if self.service_url:
            data["service"]["url"] = self.service_url
        if self.mining:
            data["mining"] = {
                "language": self.mining.language,
                "star_rank_limit": self.mining.star_rank_limit,
                "min_pull_requests": self.mining.min_pull_requests,
                "license_allowlist": sorted(self.mining.license_allowlist),
            }
        return data

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        base = base_dir or Path(".")

        def resolve(p: str | None) -> str | None:
            if p is None:
                return None
            path = Path(p)
            return str(path if path.is_absolute() else base / path)

        mining = None
        if "mining" in data:
            m = data["mining"]
            mining = MiningCriteria(
                language=m["language"],
                license_allowlist=frozenset(m.get("license_allowlist", ())),
                star_rank_limit=m.get("star_rank_limit", 10_000),
                min_pull_requests=m.get("min_pull_requests", 1_000),
            )
        service = data.get("service", {})
        backends = []
        for b in data.get("backends", ()):
            spec = dict(b)
            backend_id = spec.pop("id")
            kind = spec.pop("kind")
            backends.append(BackendDescriptor(backend_id, kind, spec))
        return cls(
            store_path=resolve(data.get("store_path", "corpus.db")),
            keywords_path=resolve(data.get("keywords_path")),
            taxonomy_path=resolve(data.get("taxonomy_path")),
            mining=mining,
            loop=LoopConfig.from_dict(data.get("loop", {})),
            backends=backends,
            service_host=service.get("host", "127.0.0.1"),
            service_port=int(service.get("port", 8575)),
            service_url=service.get("url"),
            seed=int(data.get("seed", 0)),
        )

    def validate_files(self) -> None:
        """Referenced auxiliary files must exist at load time."""
        for label, path in (("keywords_path", self.keywords_path),
                            ("taxonomy_path", self.taxonomy_path)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} points to a missing file: {path}")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
        data = json.loads(text) if path.suffix == ".json" else toml.loads(text)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        cfg = PipelineConfig.from_dict(data, base_dir=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration in {path}: {exc}") from exc
    cfg.validate_files()
    return cfg


def dump_config(cfg: PipelineConfig, path: str | Path) -> None:
    path = Path(path)
    data = cfg.as_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    else:
        path.write_text(toml.dumps(data), encoding="utf-8")


def api_key_from_env(config: dict) -> str | None:
    env_name = config.get("api_key_env")
    if not env_name:
        return None
    return os.environ.get(env_name)
