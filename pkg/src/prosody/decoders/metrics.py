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
"""Objective prosody metrics: pooled STDs and histogram Jensen-Shannon divergences.

All statistics are pooled over the whole set of utterances. Divergences use
natural logarithms, so they lie in [0, ln 2].
"""

__all__ = [
    "DataMismatchError",
    "HistogramSpec",
    "ModelStats",
    "EvalReport",
    "pooled_std",
    "delta_series",
    "shared_edges",
    "jsd",
    "duration_jsd",
    "histogram_payload",
    "model_stats",
    "build_report",
    "render_table",
    "std_range",
    "std_slope",
]

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy

from .corpus import UtteranceRecord
from .defaults import DefaultParams
from .tensor import ContractError

logger = logging.getLogger(__name__)

LOG_BASE_NOTE = "JSD uses natural logarithms; values lie in [0, ln 2 = 0.693147]"
ORACLE = "oracle"


class DataMismatchError(ValueError):
    """Raised when generated samples do not cover the oracle utterance set."""

    def __init__(self, name: str, missing: Iterable[str], extra: Iterable[str]) -> None:
        missing, extra = sorted(missing), sorted(extra)
        message = f"Utterance sets differ for '{name}'"
        if missing:
            message += f"; missing: {', '.join(missing)}"
        if extra:
            message += f"; unexpected: {', '.join(extra)}"
        super().__init__(message)
        self.missing = missing
        self.extra = extra


@dataclass(frozen=True)
class HistogramSpec:
    """Binning shared by the two samples of every divergence."""

    n_bins: int = DefaultParams.n_bins
    range_expand: float = DefaultParams.range_expand
    smoothing: float = DefaultParams.smoothing
    duration_cap: int = DefaultParams.duration_cap
    sensitivity_bins: Tuple[int, ...] = DefaultParams.sensitivity_bins

    def __post_init__(self) -> None:
        if self.n_bins < 1 or self.duration_cap < 1 or min(self.sensitivity_bins, default=1) < 1:
            raise ContractError(f"Histogram sizes must be >= 1: {self}")
        if self.range_expand < 0 or self.smoothing < 0:
            raise ContractError(f"range_expand and smoothing must be >= 0: {self}")


def pooled_std(values: Sequence[float]) -> float:
    """Population standard deviation of all the values."""
    array = np.asarray(values, dtype=np.float64)
    if array.size < 2:
        raise ContractError(f"Standard deviation needs at least 2 values, got {array.size}")
    # shifting by the first value keeps a constant set at exactly 0
    return float(np.std(array - array[0]))


def delta_series(sequences: Iterable[Sequence[float]]) -> List[float]:
    """Within-utterance first differences, concatenated over utterances."""
    deltas: List[float] = []
    for sequence in sequences:
        deltas.extend(float(v) for v in np.diff(np.asarray(sequence, dtype=np.float64)))
    return deltas


def shared_edges(samples: Sequence[Sequence[float]], n_bins: int, range_expand: float) -> np.ndarray:
    """n_bins + 1 edges over the joint range of the samples, widened on both sides."""
    low = min(float(np.min(sample)) for sample in samples)
    high = max(float(np.max(sample)) for sample in samples)
    span = high - low if high > low else 1.0
    return np.linspace(low - range_expand * span, high + range_expand * span, n_bins + 1)


def _smoothed(counts: np.ndarray, smoothing: float) -> np.ndarray:
    """Bin probabilities after adding the smoothing pseudo-count to every bin."""
    mass = counts + smoothing
    return mass / mass.sum()


def _jsd_from_counts(counts_a: np.ndarray, counts_b: np.ndarray, smoothing: float) -> float:
    p = _smoothed(counts_a.astype(np.float64), smoothing)
    q = _smoothed(counts_b.astype(np.float64), smoothing)
    m = 0.5 * (p + q)
    value = 0.5 * entropy(p, m) + 0.5 * entropy(q, m)
    return float(np.clip(value, 0.0, np.log(2.0)))


def _check_samples(sample_a: Sequence[float], sample_b: Sequence[float]) -> None:
    if len(sample_a) == 0 or len(sample_b) == 0:
        raise ContractError("JSD needs two non-empty samples")


def jsd(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    spec: Optional[HistogramSpec] = None,
    n_bins: int = 0,
) -> float:
    """Jensen-Shannon divergence of two samples histogrammed on shared edges."""
    spec = spec if spec is not None else HistogramSpec()
    _check_samples(sample_a, sample_b)
    edges = shared_edges([sample_a, sample_b], n_bins or spec.n_bins, spec.range_expand)
    counts_a, _ = np.histogram(sample_a, bins=edges)
    counts_b, _ = np.histogram(sample_b, bins=edges)
    return _jsd_from_counts(counts_a, counts_b, spec.smoothing)


def _duration_counts(durations: Sequence[int], cap: int) -> np.ndarray:
    """One bin per frame count 1..cap and one overflow bin."""
    values = np.clip(np.asarray(durations, dtype=np.int64), 1, cap + 1)
    return np.bincount(values - 1, minlength=cap + 1)


def duration_jsd(
    durations_a: Sequence[int], durations_b: Sequence[int], spec: Optional[HistogramSpec] = None
) -> float:
    """JSD of two duration samples over integer bins."""
    spec = spec if spec is not None else HistogramSpec()
    _check_samples(durations_a, durations_b)
    counts_a = _duration_counts(durations_a, spec.duration_cap)
    counts_b = _duration_counts(durations_b, spec.duration_cap)
    return _jsd_from_counts(counts_a, counts_b, spec.smoothing)


def histogram_payload(sample: Sequence[float], edges: np.ndarray) -> Dict[str, List[float]]:
    """Bin edges and normalized masses, ready to plot."""
    counts, _ = np.histogram(sample, bins=edges)
    return {"edges": [float(e) for e in edges], "mass": [float(m) for m in counts / max(1, counts.sum())]}


@dataclass
class ModelStats:
    """One row of the comparison table."""

    std_logf0: float
    std_dur: float
    std_delta_logf0: Optional[float]
    jsd_logf0: Optional[float] = None
    jsd_dur: Optional[float] = None
    n_utterances: int = 0
    n_values: int = 0
    jsd_logf0_by_bins: Dict[str, float] = field(default_factory=dict)

    def to_json_struct(self) -> Dict[str, Any]:
        """JSON form of the row."""
        return dict(self.__dict__)


@dataclass
class EvalReport:
    """Oracle row, per-model rows, log-f0 histograms and provenance."""

    oracle: ModelStats
    models: Dict[str, ModelStats]
    histograms: Dict[str, Dict[str, List[float]]]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def to_json_struct(self) -> Dict[str, Any]:
        """JSON form of the report."""
        return {
            "note": LOG_BASE_NOTE,
            "log_base": "e",
            "oracle": self.oracle.to_json_struct(),
            "models": {name: stats.to_json_struct() for name, stats in self.models.items()},
            "histograms": self.histograms,
            "provenance": self.provenance,
        }


def _canonical(records: Iterable[UtteranceRecord]) -> List[UtteranceRecord]:
    return sorted(records, key=lambda r: (r.utt_id, r.draw if r.draw is not None else -1))


def _log_f0(records: Sequence[UtteranceRecord]) -> List[float]:
    return [v for r in records for v in r.log_f0]


def _durations(records: Sequence[UtteranceRecord]) -> List[int]:
    return [d for r in records for d in r.duration]


def model_stats(
    records: Sequence[UtteranceRecord],
    oracle: Optional[Sequence[UtteranceRecord]] = None,
    spec: Optional[HistogramSpec] = None,
) -> ModelStats:
    """STD columns of a record set, plus JSDs against the oracle records when given."""
    spec = spec if spec is not None else HistogramSpec()
    records = _canonical(records)
    log_f0 = _log_f0(records)
    durations = _durations(records)
    deltas = delta_series(r.log_f0 for r in records)
    stats = ModelStats(
        std_logf0=pooled_std(log_f0),
        std_dur=pooled_std(durations),
        std_delta_logf0=pooled_std(deltas) if len(deltas) >= 2 else None,
        n_utterances=len(records),
        n_values=len(log_f0),
    )
    if oracle is not None:
        oracle_log_f0 = _log_f0(oracle)
        stats.jsd_logf0 = jsd(log_f0, oracle_log_f0, spec)
        stats.jsd_dur = duration_jsd(durations, _durations(oracle), spec)
        stats.jsd_logf0_by_bins = {
            str(n_bins): jsd(log_f0, oracle_log_f0, spec, n_bins=n_bins) for n_bins in spec.sensitivity_bins
        }
    return stats


def build_report(
    oracle: Sequence[UtteranceRecord],
    model_samples: Mapping[str, Sequence[UtteranceRecord]],
    spec: Optional[HistogramSpec] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """Compares every generated set with the oracle records of the same utterances."""
    spec = spec if spec is not None else HistogramSpec()
    expected = {record.utt_id for record in oracle}
    for name, records in model_samples.items():
        found = {record.utt_id for record in records}
        if found != expected:
            raise DataMismatchError(name, expected - found, found - expected)

    rows = {}
    for name, records in model_samples.items():
        rows[name] = model_stats(records, oracle, spec)
        logger.info(f"{name}: JSD log-f0 {rows[name].jsd_logf0:.4f}, JSD dur {rows[name].jsd_dur:.4f}")

    all_log_f0 = [_log_f0(oracle)] + [_log_f0(records) for records in model_samples.values()]
    edges = shared_edges(all_log_f0, spec.n_bins, spec.range_expand)
    histograms = {ORACLE: histogram_payload(all_log_f0[0], edges)}
    for name, values in zip(model_samples, all_log_f0[1:]):
        histograms[name] = histogram_payload(values, edges)
    return EvalReport(
        oracle=model_stats(oracle, None, spec),
        models=rows,
        histograms=histograms,
        provenance=provenance or {},
    )


def render_table(report: EvalReport) -> str:
    """Plain-text table: one row per model plus the oracle, five numeric columns."""
    header = (
        f"{'system':<12}{'STD log-f0':>12}{'STD dur':>10}{'STD dlog-f0':>13}"
        f"{'JSD log-f0':>12}{'JSD dur':>10}"
    )
    lines = [header, "-" * len(header)]

    def cell(value: Optional[float], width: int) -> str:
        return f"{'-':>{width}}" if value is None else f"{value:>{width}.3f}"

    rows = list(report.models.items()) + [(ORACLE, report.oracle)]
    for name, stats in rows:
        lines.append(
            f"{name:<12}{stats.std_logf0:>12.3f}{stats.std_dur:>10.3f}{cell(stats.std_delta_logf0, 13)}"
            f"{cell(stats.jsd_logf0, 12)}{cell(stats.jsd_dur, 10)}"
        )
    lines.append(f"({LOG_BASE_NOTE})")
    return "\n".join(lines)


def std_range(stds: Sequence[float]) -> float:
    """Spread (max - min) of STDs measured over a temperature grid."""
    return float(np.max(stds) - np.min(stds))


def std_slope(taus: Sequence[float], stds: Sequence[float]) -> float:
    """Least-squares slope of STD against temperature."""
    if len(taus) != len(stds) or len(taus) < 2:
        raise ContractError("A slope needs at least two (tau, std) pairs")
    slope, _ = np.polyfit(np.asarray(taus, dtype=np.float64), np.asarray(stds, dtype=np.float64), 1)
    return float(slope)
