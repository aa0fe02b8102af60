#!env python3
# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Experiment configuration and the steps shared by the command-line tools.

An experiment is described by one JSON document. Every section is optional
and falls back to `DefaultParams`:

    {
        "seed": 0, "task": "prosody", "model": "flow",
        "data": {...SyntheticSpec...},
        "encoder": {...}, "regression": {...}, "flow": {...}, "diffusion": {...},
        "training": {"steps": 3000, "batch_size": 32, "lr": 0.001},
        "sampling": {"tau": 0.4, "draws": 1, "workers": 1},
        "eval": {"n_bins": 64}
    }
"""

__all__ = [
    "ConfigError",
    "MODEL_KINDS",
    "EncoderSettings",
    "SamplingConfig",
    "ExperimentConfig",
    "load_config",
    "build_model",
    "train_model",
    "save_model",
    "load_model",
    "default_tau",
    "sample_records",
    "save_samples",
    "load_samples",
    "sweep_tau",
    "render_sweep_table",
]

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from os import PathLike
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .corpus import Corpus, SyntheticSpec, UtteranceRecord, load_jsonl, round_duration, save_jsonl
from .defaults import DefaultParams
from .diffusion import DiffusionConfig, DiffusionModel
from .encoder import EncoderConfig
from .flow import FlowConfig, FlowModel
from .metrics import HistogramSpec, model_stats, std_range, std_slope
from .regression import RegressionConfig, RegressionModel
from .tensor import ContractError
from .training import (
    FRAMES,
    PROSODY,
    TASKS,
    ConditionalModel,
    LossCurve,
    TargetScaler,
    TrainConfig,
    fit,
    make_batch,
)

logger = logging.getLogger(__name__)

StrPath = Union[str, PathLike]

MODEL_KINDS: Dict[str, Type[ConditionalModel]] = {
    "l2": RegressionModel,
    "flow": FlowModel,
    "diff": DiffusionModel,
}
HEAD_CONFIGS: Dict[str, type] = {
    "l2": RegressionConfig,
    "flow": FlowConfig,
    "diff": DiffusionConfig,
}


class ConfigError(ValueError):
    """Raised when an experiment configuration is missing or invalid."""


@dataclass(frozen=True)
class EncoderSettings:
    """Encoder sizes; vocabularies come from the corpus."""

    phone_dim: int = DefaultParams.phone_dim
    style_dim: int = DefaultParams.style_dim
    context_width: int = DefaultParams.context_width
    hidden: int = DefaultParams.encoder_hidden
    depth: int = DefaultParams.encoder_depth
    out_dim: int = DefaultParams.encoder_out_dim

    def build(self, phone_vocab: int, style_vocab: int, extra_dim: int = 0) -> EncoderConfig:
        """Full encoder configuration for a corpus."""
        return EncoderConfig(
            phone_vocab=phone_vocab, style_vocab=style_vocab, extra_dim=extra_dim, **asdict(self)
        )


@dataclass(frozen=True)
class SamplingConfig:
    """Generation settings; a missing tau means the default of the model family."""

    tau: Optional[float] = None
    draws: int = 1
    workers: int = 1
    chunk_size: int = 64
    taus: Tuple[float, ...] = DefaultParams.tau_grid

    def __post_init__(self) -> None:
        if self.tau is not None and self.tau < 0:
            raise ContractError(f"Temperature must be >= 0, got {self.tau}")
        if min(self.draws, self.workers, self.chunk_size) < 1:
            raise ContractError(f"draws, workers and chunk_size must be >= 1: {self}")
        if any(tau < 0 for tau in self.taus):
            raise ContractError(f"Temperatures must be >= 0: {self.taus}")


_SECTIONS: Dict[str, type] = {
    "data": SyntheticSpec,
    "encoder": EncoderSettings,
    "regression": RegressionConfig,
    "flow": FlowConfig,
    "diffusion": DiffusionConfig,
    "training": TrainConfig,
    "sampling": SamplingConfig,
    "eval": HistogramSpec,
}
_TUPLE_FIELDS = {"taus", "sensitivity_bins"}


def _section(name: str, section_type: type, data: Any) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"Config section '{name}' must be an object")
    if section_type is SyntheticSpec:
        try:
            return SyntheticSpec.from_dict(data)
        except (ContractError, TypeError) as ex:
            raise ConfigError(f"Invalid '{name}' section: {ex}") from ex
    known = {f.name for f in fields(section_type)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown keys in '{name}' section: {', '.join(sorted(unknown))}")
    values = {key: tuple(value) if key in _TUPLE_FIELDS else value for key, value in data.items()}
    try:
        return section_type(**values)
    except (ContractError, TypeError) as ex:
        raise ConfigError(f"Invalid '{name}' section: {ex}") from ex


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings of one experiment."""

    seed: int = 0
    task: str = PROSODY
    model: str = "flow"
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    eval: HistogramSpec = field(default_factory=HistogramSpec)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"Unknown task '{self.task}', expected one of {TASKS}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"Unknown model '{self.model}', expected one of {tuple(MODEL_KINDS)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Parses the JSON form; unknown keys are errors."""
        if not isinstance(data, dict):
            raise ConfigError("The configuration must be a JSON object")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")
        values: Dict[str, Any] = {}
        for key, value in data.items():
            if key in _SECTIONS:
                values[key] = _section(key, _SECTIONS[key], value)
            elif key == "seed":
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"seed must be an integer, got {value!r}")
                values[key] = value
            else:
                values[key] = value
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """JSON form, embedded into every artifact."""
        data: Dict[str, Any] = {"seed": self.seed, "task": self.task, "model": self.model}
        for name in _SECTIONS:
            section = getattr(self, name)
            data[name] = section.to_dict() if isinstance(section, SyntheticSpec) else asdict(section)
        return data

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Applies command-line values; None leaves a field as configured."""
        given = {key: value for key, value in overrides.items() if value is not None}
        top = {key: value for key, value in given.items() if key in ("seed", "task", "model")}
        sampling = {key: value for key, value in given.items() if key in ("tau", "draws", "workers")}
        try:
            config = replace(self, **top)
            if sampling:
                config = replace(config, sampling=replace(config.sampling, **sampling))
            if "seed" in top:
                data = SyntheticSpec.from_dict({**config.data.to_dict(), "seed": top["seed"]})
                config = replace(config, data=data)
        except ContractError as ex:
            raise ConfigError(str(ex)) from ex
        return config


def load_config(path: Optional[StrPath]) -> ExperimentConfig:
    """Reads a JSON configuration file, or returns the defaults when path is None."""
    if path is None:
        return ExperimentConfig()
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"Config file {config_path} does not exist")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as ex:
        raise ConfigError(f"Config file {config_path} is not valid JSON: {ex}") from ex
    return ExperimentConfig.from_dict(data)


## Models
def _target_dim(task: str, spec: SyntheticSpec) -> int:
    if task == PROSODY:
        return 2
    if spec.frame_dim < 2:
        raise ConfigError("The frame task needs a corpus generated with frame_dim >= 2")
    return spec.frame_dim


def build_model(
    config: ExperimentConfig, spec: SyntheticSpec, kind: Optional[str] = None
) -> ConditionalModel:
    """Untrained model of the configured (or given) kind, sized for the corpus."""
    kind = kind or config.model
    if kind not in MODEL_KINDS:
        raise ConfigError(f"Unknown model '{kind}', expected one of {tuple(MODEL_KINDS)}")
    target_dim = _target_dim(config.task, spec)
    labels = spec.n_styles if config.task == PROSODY else spec.n_speakers
    encoder = config.encoder.build(spec.n_phonemes, labels, extra_dim=1 if config.task == FRAMES else 0)
    if kind == "l2":
        return RegressionModel(config.task, encoder, target_dim, config=config.regression)
    if kind == "flow":
        return FlowModel(config.task, encoder, target_dim, config=replace(config.flow, target_dim=target_dim))
    head = replace(config.diffusion, target_dim=target_dim)
    return DiffusionModel(config.task, encoder, target_dim, config=head)


def train_model(
    config: ExperimentConfig, corpus: Corpus, kind: Optional[str] = None
) -> Tuple[ConditionalModel, LossCurve]:
    """Builds and trains one model on the training split."""
    model = build_model(config, corpus.spec, kind)
    curve, _ = fit(model, corpus.train, config.training, config.seed)
    return model, curve


def save_model(
    model: ConditionalModel, path: StrPath, config: ExperimentConfig, curve: Optional[LossCurve] = None
) -> Path:
    """Checkpoint with model metadata and provenance, plus loss.csv when a curve is given."""
    metadata = {**model.metadata(), "seed": config.seed, "config": config.to_dict()}
    directory = save_checkpoint(model.store, path, adam=model.adam, metadata=metadata)
    if curve is not None:
        curve.to_csv(directory / "loss.csv")
    return directory


def load_model(path: StrPath) -> Tuple[ConditionalModel, Dict[str, Any]]:
    """Rebuilds a model around a checkpoint; returns it with the checkpoint metadata."""
    metadata = load_checkpoint(path).metadata
    kind = metadata.get("kind")
    if kind not in MODEL_KINDS:
        raise ContractError(f"{path} is not a model checkpoint (kind {kind!r})")
    try:
        encoder = EncoderConfig(**metadata["encoder"])
        head = HEAD_CONFIGS[kind](**metadata["head"])
        scaler = TargetScaler.from_dict(metadata["scaler"])
        model = MODEL_KINDS[kind](
            metadata["task"], encoder, metadata["target_dim"], scaler=scaler, config=head
        )
    except (KeyError, TypeError) as ex:
        raise ContractError(f"Incomplete model metadata in {path}: {ex}") from ex
    model.initialize(0)
    load_into(model.store, path)
    return model, metadata


## Sampling
def default_tau(kind: str) -> float:
    """Temperature used when none is configured."""
    return DefaultParams.tau[kind]


def _records_from_rows(
    model: ConditionalModel, chunk: Sequence[UtteranceRecord], rows: np.ndarray, draw: int
) -> List[UtteranceRecord]:
    raw = model.scaler.inverse(rows)
    generated = []
    start = 0
    for record in chunk:
        if model.task == PROSODY:
            n_rows = len(record.phonemes)
            values = raw[start : start + n_rows]
            generated.append(
                UtteranceRecord(
                    utt_id=record.utt_id,
                    phonemes=list(record.phonemes),
                    style=record.style,
                    speaker=record.speaker,
                    log_f0=[float(v) for v in values[:, 0]],
                    duration=[round_duration(v) for v in values[:, 1]],
                    draw=draw,
                )
            )
        else:
            n_rows = sum(record.duration)
            frames = [[float(v) for v in row] for row in raw[start : start + n_rows]]
            generated.append(replace(record, frames=frames, draw=draw))
        start += n_rows
    return generated


def sample_records(
    model: ConditionalModel,
    records: Sequence[UtteranceRecord],
    tau: float,
    draws: int = 1,
    seed: int = 0,
    workers: int = 1,
    chunk_size: int = 64,
) -> List[UtteranceRecord]:
    """Generates `draws` records per input record, ordered by utterance then draw.

    Utterance i of draw k uses the random stream default_rng([seed, i, k]), so
    results do not depend on chunking or on the number of worker threads.
    """
    if tau < 0:
        raise ContractError(f"Temperature must be >= 0, got {tau}")
    if model.kind == "l2" and draws != 1:
        logger.warning(f"The l2 model is deterministic: draws forced from {draws} to 1")
        draws = 1
    jobs = [
        (draw, start)
        for draw in range(draws)
        for start in range(0, len(records), chunk_size)
    ]

    def run(job: Tuple[int, int]) -> List[Tuple[int, UtteranceRecord]]:
        draw, start = job
        chunk = records[start : start + chunk_size]
        rngs = [np.random.default_rng([seed, start + offset, draw]) for offset in range(len(chunk))]
        rows = model.generate(make_batch(chunk, model.task), tau, rngs)
        generated = _records_from_rows(model, chunk, rows, draw)
        return [(start + offset, record) for offset, record in enumerate(generated)]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    indexed = [item for result in results for item in result]
    indexed.sort(key=lambda item: (item[0], item[1].draw))
    logger.info(f"Generated {len(indexed)} records with {model.kind} at tau={tau}")
    return [record for _, record in indexed]


def save_samples(records: Sequence[UtteranceRecord], path: StrPath, manifest: Dict[str, Any]) -> Path:
    """Writes generated records as JSONL with a sibling `<file>.manifest.json`."""
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(records, out_path)
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    with manifest_path.open("w", encoding="utf-8") as manifest_file:
        json.dump(manifest, manifest_file, indent=2, sort_keys=True)
        manifest_file.write("\n")
    return out_path


def load_samples(path: StrPath) -> Tuple[List[UtteranceRecord], Dict[str, Any]]:
    """Reads generated records and their manifest (empty when absent)."""
    in_path = Path(path)
    manifest_path = in_path.with_name(in_path.name + ".manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.is_file() else {}
    return load_jsonl(in_path), manifest


## Temperature sweep
def sweep_tau(
    models: Sequence[Tuple[str, ConditionalModel]],
    oracle: Sequence[UtteranceRecord],
    taus: Sequence[float],
    spec: HistogramSpec,
    draws: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> Dict[str, Any]:
    """STD and JSD of every model at every temperature, with STD range and slope per model."""
    if not taus:
        raise ContractError("The temperature grid is empty")
    report: Dict[str, Any] = {"taus": [float(tau) for tau in taus], "models": {}}
    for name, model in models:
        if model.kind == "l2":
            raise ContractError(f"{name}: temperature has no effect on the l2 model")
        rows = []
        for tau in taus:
            samples = sample_records(model, oracle, tau, draws, seed, workers)
            stats = model_stats(samples, oracle, spec)
            rows.append(
                {
                    "tau": float(tau),
                    "std_logf0": stats.std_logf0,
                    "std_dur": stats.std_dur,
                    "jsd_logf0": stats.jsd_logf0,
                    "jsd_dur": stats.jsd_dur,
                }
            )
        stds = [row["std_logf0"] for row in rows]
        report["models"][name] = {
            "kind": model.kind,
            "rows": rows,
            "std_logf0_range": std_range(stds),
            "std_logf0_slope": std_slope(taus, stds) if len(taus) > 1 else 0.0,
        }
    return report


def render_sweep_table(report: Dict[str, Any]) -> str:
    """Plain-text table of the sweep, one block per model."""
    lines = []
    for name, entry in report["models"].items():
        lines.append(f"{name} ({entry['kind']})")
        lines.append(f"{'tau':>6}{'STD log-f0':>12}{'STD dur':>10}{'JSD log-f0':>12}{'JSD dur':>10}")
        for row in entry["rows"]:
            lines.append(
                f"{row['tau']:>6.2f}{row['std_logf0']:>12.3f}{row['std_dur']:>10.3f}"
                f"{row['jsd_logf0']:>12.3f}{row['jsd_dur']:>10.3f}"
            )
        lines.append(f"STD log-f0 range {entry['std_logf0_range']:.4f}, slope {entry['std_logf0_slope']:.4f}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
