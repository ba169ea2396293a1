"""Pipeline configuration: documented defaults, strict parsing."""

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

STRATEGIES = ("icp", "knn", "cluster", "random")
EMBEDDERS = ("builtin-hash", "external-file")
INDEX_MODES = ("pq", "flat")


@dataclass
class PipelineConfig:
    dim: int = 64
    knn_k: int = 10
    nlist: int = 16
    m: int = 8
    nprobe: int = 4
    dedup_threshold: float = 0.95
    context_length: int = 8192
    strategy: str = "icp"
    seed: int = 0
    embedder: str = "builtin-hash"
    shard_size: int = 50_000_000
    vocab_size: int = 65536
    separator: bool = True
    drop_last: bool = True
    n_clusters: int = 32
    index_mode: str = "flat"
    train_sample: int = 4096
    external_embeddings: str = None
    shuffle_contexts: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = (
            "dim",
            "knn_k",
            "nlist",
            "m",
            "nprobe",
            "context_length",
            "shard_size",
            "vocab_size",
            "n_clusters",
            "train_sample",
        )
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.dedup_threshold, (int, float)) or isinstance(
            self.dedup_threshold, bool
        ):
            raise ConfigError("dedup_threshold must be a number")
        if not 0.0 < self.dedup_threshold <= 1.0:
            raise ConfigError(
                f"dedup_threshold must be in (0, 1], got {self.dedup_threshold}"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}"
            )
        if self.embedder not in EMBEDDERS:
            raise ConfigError(
                f"embedder must be one of {', '.join(EMBEDDERS)}, got {self.embedder!r}"
            )
        if self.index_mode not in INDEX_MODES:
            raise ConfigError(
                f"index_mode must be one of {', '.join(INDEX_MODES)}, got {self.index_mode!r}"
            )
        for name in ("separator", "drop_last", "shuffle_contexts"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        if self.context_length < 2:
            raise ConfigError("context_length must be at least 2")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must be at least 4")
        if self.m > self.dim:
            raise ConfigError(f"m={self.m} exceeds dim={self.dim}")
        if self.dim % self.m != 0:
            raise ConfigError(f"dim={self.dim} is not divisible by m={self.m}")
        if self.nprobe > self.nlist:
            raise ConfigError(f"nprobe={self.nprobe} exceeds nlist={self.nlist}")
        if self.embedder == "external-file" and not self.external_embeddings:
            raise ConfigError(
                "embedder 'external-file' requires external_embeddings to be set"
            )
        if self.external_embeddings is not None and not isinstance(
            self.external_embeddings, str
        ):
            raise ConfigError("external_embeddings must be a path string")

    @property
    def probed_fraction(self):
        return self.nprobe / self.nlist

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    return PipelineConfig(**raw)


def parse_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(raw)
