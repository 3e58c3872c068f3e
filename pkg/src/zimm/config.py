"""Model and pipeline configuration with the full default hyper-parameter set.

The configuration is grouped the way the hyper-parameters are grouped in the
model description: preprocessing, embedding, aggregation, encoder, decoder,
training. Every field has a default; JSON round-trips are lossless and
unknown keys are rejected so typos in config files fail loudly.

Vocabulary sizes count real tokens; the reserved no-code/OOV id 0 adds one
embedding row on top of each. The published reference vocabularies
(1036 drugs / 1391 diagnoses / 1146 procedures) are the defaults; cohort
construction overwrites them with the sizes actually built from data.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

__all__ = [
    "PreprocessingConfig",
    "EmbeddingConfig",
    "AggregationConfig",
    "EncoderConfig",
    "DecoderConfig",
    "TrainingConfig",
    "Config",
]


@dataclass
class PreprocessingConfig:
    max_days: int = 50
    max_events_per_day: int = 24
    min_count: int = 50
    buckets: int = 18
    bucket_days: int = 30
    block_days: int = 42
    age_min: int = 40
    age_max: int = 100
    age_bin_years: int = 5
    drug_vocab: int = 1036
    diagnosis_vocab: int = 1391
    procedure_vocab: int = 1146

    @property
    def label_window_days(self) -> int:
        return self.buckets * self.bucket_days


@dataclass
class EmbeddingConfig:
    code_dim: int = 64
    code_l2: float = 0.005
    code_gaussian_dropout: float = 0.3
    time_dim: int = 4
    time_l2: float = 0.01
    age_dim: int = 4
    norm_eps: float = 1e-6


@dataclass
class AggregationConfig:
    mode: str = "self-attention"
    heads: int = 3
    drop_connect: float = 0.3
    dropout: float = 0.2
    l2: float = 0.01


@dataclass
class EncoderConfig:
    cell: str = "lstm"
    units: int = 64
    layers: int = 1
    dropout: float = 0.3
    recurrent_dropout: float = 0.2


@dataclass
class DecoderConfig:
    cell: str = "gru"
    units: int = 32
    shared_layers: int = 1
    parallel_layers: int = 1
    gaussian_dropout: float = 0.3
    recurrent_dropout: float = 0.2


@dataclass
class TrainingConfig:
    optimizer: str = "nadam"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 42


@dataclass
class Config:
    preprocessing: PreprocessingConfig = field(default_factory=PreprocessingConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def vocab_sizes(self) -> dict:
        p = self.preprocessing
        return {
            "drug": p.drug_vocab,
            "procedure": p.procedure_vocab,
            "diagnosis": p.diagnosis_vocab,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        groups = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(groups)
        if unknown:
            raise ValueError(f"unknown config groups: {sorted(unknown)}")
        kwargs = {}
        for gname, gf in [(f.name, f) for f in dataclasses.fields(cls)]:
            if gname not in d:
                continue
            gcls = gf.default_factory
            names = {f.name for f in dataclasses.fields(gcls)}
            extra = set(d[gname]) - names
            if extra:
                raise ValueError(f"unknown keys in config group {gname!r}: {sorted(extra)}")
            kwargs[gname] = gcls(**d[gname])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Config":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")
