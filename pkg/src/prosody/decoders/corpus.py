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
"""Synthetic one-to-many prosody corpus with a known conditional law.

Every (phoneme, style) cell owns a two-component Gaussian mixture over
(log-f0, duration). Per-phoneme targets are drawn independently from their
cell, so the oracle conditional distribution is known exactly.
"""

__all__ = [
    "CorpusParseError",
    "CellLaw",
    "SyntheticSpec",
    "UtteranceRecord",
    "FrameRecord",
    "Corpus",
    "cell_law",
    "gen_corpus",
    "oracle_sample",
    "oracle_conditional_mean",
    "oracle_cell_std",
    "round_duration",
    "save_jsonl",
    "load_jsonl",
    "save_corpus",
    "load_corpus",
]

import json
from dataclasses import asdict, dataclass, field, fields
from os import PathLike
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np

from .tensor import ContractError

StrPath = Union[str, PathLike]
SPLITS = ("train", "dev", "test")


class CorpusParseError(ValueError):
    """Raised for a malformed line in a JSON-Lines corpus file."""

    def __init__(self, path: StrPath, line_number: int, added_message: str = "") -> None:
        message = f"Malformed record in {path} at line {line_number}"
        if added_message:
            message += f": {added_message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class CellLaw:
    """Two-component mixture over (log-f0, duration) for one (phoneme, style) cell."""

    weights: Tuple[float, ...]
    means: Tuple[Tuple[float, float], ...]
    stds: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not len(self.weights) == len(self.means) == len(self.stds) or not self.weights:
            raise ContractError("Cell law needs as many weights, means and stds")
        if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise ContractError(f"Cell weights must be a distribution, got {self.weights}")
        if any(s < 0 for pair in self.stds for s in pair):
            raise ContractError("Cell component stds must be >= 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CellLaw":
        """Builds a law from its JSON form."""
        return cls(
            weights=tuple(float(w) for w in data["weights"]),
            means=tuple((float(a), float(b)) for a, b in data["means"]),
            stds=tuple((float(a), float(b)) for a, b in data["stds"]),
        )

    def mean(self) -> Tuple[float, float]:
        """Mixture mean sum_i w_i mu_i."""
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        total = w @ mu
        return float(total[0]), float(total[1])

    def std(self) -> Tuple[float, float]:
        """Mixture std from the law of total variance."""
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        sd = np.asarray(self.stds)
        centre = w @ mu
        variance = w @ (sd**2) + w @ ((mu - centre) ** 2)
        return float(np.sqrt(variance[0])), float(np.sqrt(variance[1]))


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the synthetic corpus. Cell laws derive from `seed` unless given."""

    n_phonemes: int = 8
    n_styles: int = 4
    n_speakers: int = 4
    n_train: int = 5000
    n_dev: int = 250
    n_test: int = 500
    min_len: int = 6
    max_len: int = 14
    seed: int = 0
    frame_dim: int = 0
    cells: Optional[Tuple[CellLaw, ...]] = None

    def __post_init__(self) -> None:
        if min(self.n_phonemes, self.n_styles, self.n_speakers) < 1:
            raise ContractError("Synthetic spec needs at least one phoneme, style and speaker")
        if min(self.n_train, self.n_dev, self.n_test) < 0 or self.n_train < 1:
            raise ContractError("Synthetic spec needs a non-empty training split")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError(f"Invalid utterance length range [{self.min_len}, {self.max_len}]")
        if self.frame_dim < 0:
            raise ContractError("frame_dim must be >= 0")
        if self.cells is not None and len(self.cells) != self.n_phonemes * self.n_styles:
            n_cells = self.n_phonemes * self.n_styles
            raise ContractError(f"Expected {n_cells} cell laws, got {len(self.cells)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticSpec":
        """Builds a spec from its JSON form (unknown keys are rejected)."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"Unknown synthetic spec fields: {', '.join(sorted(unknown))}")
        values = dict(data)
        if values.get("cells") is not None:
            values["cells"] = tuple(CellLaw.from_dict(cell) for cell in values["cells"])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """JSON form of the spec."""
        data = asdict(self)
        if self.cells is not None:
            data["cells"] = [
                {
                    "weights": list(c.weights),
                    "means": [list(m) for m in c.means],
                    "stds": [list(s) for s in c.stds],
                }
                for c in self.cells
            ]
        return data


@dataclass
class UtteranceRecord:
    """One utterance with per-phoneme targets (log-f0 and duration in frames)."""

    utt_id: str
    phonemes: List[int]
    style: int
    speaker: int
    log_f0: List[float]
    duration: List[int]
    frames: Optional[List[List[float]]] = None
    draw: Optional[int] = None

    def __post_init__(self) -> None:
        if not len(self.phonemes) == len(self.log_f0) == len(self.duration):
            raise ContractError(f"{self.utt_id}: phonemes, log_f0 and duration lengths differ")
        if any(d < 1 for d in self.duration):
            raise ContractError(f"{self.utt_id}: durations must be >= 1")
        if self.frames is not None and len(self.frames) != sum(self.duration):
            raise ContractError(f"{self.utt_id}: {len(self.frames)} frames for {sum(self.duration)} aligned")

    def to_json_struct(self) -> Dict[str, Any]:
        """Returns the JSON-Lines representation (optional fields omitted when unset)."""
        data: Dict[str, Any] = {
            "utt_id": self.utt_id,
            "phonemes": list(self.phonemes),
            "style": self.style,
            "speaker": self.speaker,
            "log_f0": [float(v) for v in self.log_f0],
            "duration": [int(d) for d in self.duration],
        }
        if self.frames is not None:
            data["frames"] = [[float(v) for v in frame] for frame in self.frames]
        if self.draw is not None:
            data["draw"] = self.draw
        return data


@dataclass
class FrameRecord:
    """Frame-level input to the feature pipeline (f0 in Hz, 0 where unvoiced)."""

    utt_id: str
    frame_f0: List[float]
    voicing: List[bool]
    alignment: List[int]
    speaker: int
    style: int
    phonemes: List[int]

    def __post_init__(self) -> None:
        if len(self.frame_f0) != len(self.voicing):
            raise ContractError(f"{self.utt_id}: f0 and voicing lengths differ")
        if sum(self.alignment) != len(self.frame_f0):
            raise ContractError(
                f"{self.utt_id}: alignment covers {sum(self.alignment)} of {len(self.frame_f0)} frames"
            )
        if len(self.alignment) != len(self.phonemes):
            raise ContractError(f"{self.utt_id}: one alignment count per phoneme expected")
        if any(f <= 0 for f, voiced in zip(self.frame_f0, self.voicing) if voiced):
            raise ContractError(f"{self.utt_id}: voiced frames need f0 > 0")

    def to_json_struct(self) -> Dict[str, Any]:
        """Returns the JSON-Lines representation."""
        return {
            "utt_id": self.utt_id,
            "frame_f0": [float(v) for v in self.frame_f0],
            "voicing": [bool(v) for v in self.voicing],
            "alignment": [int(a) for a in self.alignment],
            "speaker": self.speaker,
            "style": self.style,
            "phonemes": list(self.phonemes),
        }


@dataclass
class Corpus:
    """Train/dev/test splits generated from one spec and seed."""

    spec: SyntheticSpec
    train: List[UtteranceRecord] = field(default_factory=list)
    dev: List[UtteranceRecord] = field(default_factory=list)
    test: List[UtteranceRecord] = field(default_factory=list)

    def split(self, name: str) -> List[UtteranceRecord]:
        """Returns one split by name."""
        if name not in SPLITS:
            raise ContractError(f"Unknown split '{name}', expected one of {SPLITS}")
        return getattr(self, name)


## Cell laws and oracle
def _check_cell(p: int, s: int, spec: SyntheticSpec) -> None:
    if not (0 <= p < spec.n_phonemes and 0 <= s < spec.n_styles):
        raise ContractError(
            f"Invalid cell ({p}, {s}) for {spec.n_phonemes} phonemes x {spec.n_styles} styles"
        )


def cell_law(p: int, s: int, spec: SyntheticSpec) -> CellLaw:
    """Mixture law of cell (p, s), a pure function of (spec.seed, p, s).

    Cells with even p + s are bimodal: the two components are at least two
    pooled stds apart in log-f0, and the higher-pitched one is also longer.
    """
    _check_cell(p, s, spec)
    if spec.cells is not None:
        return spec.cells[p * spec.n_styles + s]

    base = np.random.default_rng([spec.seed, 1, p])
    style = np.random.default_rng([spec.seed, 2, s])
    rng = np.random.default_rng([spec.seed, 3, p, s])
    centre_f0 = base.uniform(-0.2, 0.2) + style.uniform(-0.08, 0.08)
    centre_dur = base.uniform(5.0, 9.0) + style.uniform(-1.0, 1.0)
    std_f0 = rng.uniform(0.04, 0.07)
    std_dur = rng.uniform(0.8, 1.4)
    if (p + s) % 2 == 0:
        gap_f0 = rng.uniform(0.3, 0.45)
        gap_dur = rng.uniform(3.0, 5.0)
        weight = rng.uniform(0.3, 0.7)
    else:
        gap_f0 = rng.uniform(0.0, 0.5) * std_f0
        gap_dur = rng.uniform(0.0, 0.5) * std_dur
        weight = 0.5
    low_dur = max(centre_dur - gap_dur / 2, 2.5)
    return CellLaw(
        weights=(weight, 1.0 - weight),
        means=((centre_f0 - gap_f0 / 2, low_dur), (centre_f0 + gap_f0 / 2, low_dur + gap_dur)),
        stds=((std_f0, std_dur), (std_f0, std_dur)),
    )


def round_duration(value: float) -> int:
    """Rounds a continuous duration half-up, with a minimum of one frame."""
    return max(1, int(np.floor(value + 0.5)))


def _draw(law: CellLaw, rng: np.random.Generator) -> Tuple[float, float]:
    component = int(rng.choice(len(law.weights), p=law.weights))
    mean, std = law.means[component], law.stds[component]
    return float(mean[0] + std[0] * rng.standard_normal()), float(mean[1] + std[1] * rng.standard_normal())


def oracle_sample(p: int, s: int, spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[float, int]:
    """One (log-f0, duration) draw from cell (p, s), duration rounded as in the corpus."""
    log_f0, duration = _draw(cell_law(p, s, spec), rng)
    return log_f0, round_duration(duration)


def oracle_conditional_mean(p: int, s: int, spec: SyntheticSpec) -> Tuple[float, float]:
    """Exact conditional mean of cell (p, s)."""
    return cell_law(p, s, spec).mean()


def oracle_cell_std(p: int, s: int, spec: SyntheticSpec) -> Tuple[float, float]:
    """Exact conditional std of cell (p, s)."""
    return cell_law(p, s, spec).std()


## Frame-level surrogate features
def _frame_tables(spec: SyntheticSpec) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng([spec.seed, 4])
    dim = spec.frame_dim
    return {
        "phoneme": rng.normal(0.0, 1.0, (spec.n_phonemes, dim)),
        "speaker": rng.normal(0.0, 0.5, (spec.n_speakers, dim)),
        "pitch": rng.normal(0.0, 2.0, dim),
        "ramp": rng.normal(0.0, 0.5, dim),
        "mode": rng.normal(0.0, 0.6, dim),
    }


def _frames(
    phonemes: Sequence[int],
    speaker: int,
    log_f0: Sequence[float],
    duration: Sequence[int],
    tables: Dict[str, np.ndarray],
    rng: np.random.Generator,
) -> List[List[float]]:
    frames = []
    for phoneme, pitch, length in zip(phonemes, log_f0, duration):
        mode = 1.0 if rng.random() < 0.5 else -1.0
        for position in range(length):
            ramp = (position + 0.5) / length - 0.5
            vector = (
                tables["phoneme"][phoneme]
                + tables["speaker"][speaker]
                + pitch * tables["pitch"]
                + ramp * tables["ramp"]
                + mode * tables["mode"]
                + 0.1 * rng.standard_normal(tables["ramp"].shape)
            )
            frames.append([float(v) for v in vector])
    return frames


## Generation
def _generate_utterance(spec: SyntheticSpec, split_index: int, index: int, tables) -> UtteranceRecord:
    rng = np.random.default_rng([spec.seed, 10 + split_index, index])
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    style = int(rng.integers(spec.n_styles))
    speaker = int(rng.integers(spec.n_speakers))
    phonemes = [int(p) for p in rng.integers(spec.n_phonemes, size=length)]
    log_f0 = []
    duration = []
    for phoneme in phonemes:
        pitch, frames = oracle_sample(phoneme, style, spec, rng)
        log_f0.append(pitch)
        duration.append(frames)
    frames_data = None
    if spec.frame_dim:
        frames_data = _frames(phonemes, speaker, log_f0, duration, tables, rng)
    return UtteranceRecord(
        utt_id=f"{SPLITS[split_index]}-{index:06d}",
        phonemes=phonemes,
        style=style,
        speaker=speaker,
        log_f0=log_f0,
        duration=duration,
        frames=frames_data,
    )


def gen_corpus(spec: SyntheticSpec, seed: Optional[int] = None) -> Corpus:
    """Generates the three splits; fully determined by the spec (and seed override)."""
    if seed is not None and seed != spec.seed:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": seed})
    tables = _frame_tables(spec) if spec.frame_dim else None
    corpus = Corpus(spec=spec)
    for split_index, (name, count) in enumerate(zip(SPLITS, (spec.n_train, spec.n_dev, spec.n_test))):
        records = [_generate_utterance(spec, split_index, index, tables) for index in range(count)]
        setattr(corpus, name, records)
    return corpus


## Serialization
RecordT = TypeVar("RecordT", UtteranceRecord, FrameRecord)


def save_jsonl(records: Iterable[Union[UtteranceRecord, FrameRecord]], path: StrPath) -> None:
    """Writes one JSON object per line (floats use exact round-trip repr)."""
    with Path(path).open("w", encoding="utf-8") as out:
        for record in records:
            out.write(json.dumps(record.to_json_struct(), separators=(",", ":")))
            out.write("\n")


def load_jsonl(path: StrPath, record_type: Type[RecordT] = UtteranceRecord) -> List[RecordT]:  # type: ignore
    """Reads records written by save_jsonl, naming the line of any malformed record."""
    records = []
    with Path(path).open("r", encoding="utf-8") as jsonl:
        for line_number, line in enumerate(jsonl, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                records.append(record_type(**data))
            except (json.JSONDecodeError, TypeError, ContractError) as ex:
                raise CorpusParseError(path, line_number, str(ex)) from ex
    return records


def save_corpus(corpus: Corpus, directory: StrPath, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """Writes train/dev/test JSONL files and a manifest with the resolved spec."""
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name in SPLITS:
        records = corpus.split(name)
        save_jsonl(records, out_dir / f"{name}.jsonl")
        counts[name] = len(records)
    manifest = {"spec": corpus.spec.to_dict(), "counts": counts}
    if provenance is not None:
        manifest["provenance"] = provenance
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as manifest_file:
        json.dump(manifest, manifest_file, indent=2, sort_keys=True)
        manifest_file.write("\n")
    return out_dir


def load_corpus(directory: StrPath) -> Corpus:
    """Reads a corpus directory written by save_corpus."""
    in_dir = Path(directory)
    manifest_path = in_dir / "manifest.json"
    with manifest_path.open("r", encoding="utf-8") as manifest_file:
        try:
            manifest = json.load(manifest_file)
            spec = SyntheticSpec.from_dict(manifest["spec"])
        except json.JSONDecodeError as ex:
            raise CorpusParseError(manifest_path, ex.lineno, ex.msg) from ex
        except (KeyError, TypeError, ContractError) as ex:
            raise CorpusParseError(manifest_path, 1, f"invalid corpus manifest: {ex}") from ex
    corpus = Corpus(spec=spec)
    for name in SPLITS:
        setattr(corpus, name, load_jsonl(in_dir / f"{name}.jsonl"))
    return corpus
