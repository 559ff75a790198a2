"""Serialized run configuration and reproducibility manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .env import EnvConfig
from .ppo import TrainConfig

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    """Full configuration of a training or evaluation run."""

    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/out"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version,
                "env": self.env.to_dict(),
                "train": dataclasses.asdict(self.train),
                "out_dir": self.out_dir}

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        return RunConfig(env=EnvConfig.from_dict(d["env"]),
                         train=TrainConfig(**d["train"]),
                         out_dir=d.get("out_dir", "runs/out"),
                         schema_version=d.get("schema_version", SCHEMA_VERSION))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load(path) -> "RunConfig":
        return RunConfig.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, config: RunConfig, outputs: list[str]) -> Path:
    """Reproducibility record: config hash, seed, code version, argv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"schema_version": SCHEMA_VERSION,
                "config_hash": config.config_hash(),
                "seed": config.train.seed,
                "env_seed": config.env.seed,
                "code_version": __version__,
                "argv": sys.argv,
                "outputs": outputs}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
