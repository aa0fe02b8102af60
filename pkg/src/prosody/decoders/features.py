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
"""Phoneme-level prosody features from frame-level f0 and alignments."""

__all__ = [
    "PipelineError",
    "interpolate_log_f0",
    "speaker_log_f0_means",
    "f0_pipeline",
    "duration_from_alignment",
    "ingest_frame_records",
]

import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from .corpus import FrameRecord, UtteranceRecord
from .tensor import ContractError

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    """Raised when an utterance cannot go through the feature pipeline."""


def interpolate_log_f0(frame_f0: Iterable[float], voicing: Iterable[bool]) -> np.ndarray:
    """Frame log-f0 with unvoiced gaps linearly interpolated.

    Leading and trailing gaps hold the nearest voiced value.
    """
    f0 = np.asarray(list(frame_f0), dtype=np.float64)
    voiced = np.asarray(list(voicing), dtype=bool)
    if not voiced.any():
        raise PipelineError("No voiced frame to interpolate from")
    positions = np.flatnonzero(voiced)
    # np.interp holds the end values outside of the voiced span
    return np.interp(np.arange(f0.size), positions, np.log(f0[voiced]))


def speaker_log_f0_means(records: Iterable[FrameRecord]) -> Dict[int, float]:
    """Mean log-f0 over the voiced frames of each speaker."""
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    for record in records:
        f0 = np.asarray(record.frame_f0, dtype=np.float64)
        voiced = np.asarray(record.voicing, dtype=bool)
        sums[record.speaker] = sums.get(record.speaker, 0.0) + float(np.log(f0[voiced]).sum())
        counts[record.speaker] = counts.get(record.speaker, 0) + int(voiced.sum())
    return {speaker: sums[speaker] / counts[speaker] for speaker in sums if counts[speaker]}


def duration_from_alignment(record: FrameRecord) -> List[int]:
    """Number of frames aligned to each phoneme."""
    if any(count < 1 for count in record.alignment):
        raise ContractError(f"{record.utt_id}: every phoneme needs at least one aligned frame")
    return [int(count) for count in record.alignment]


def f0_pipeline(record: FrameRecord, speaker_mean: Optional[float] = None) -> List[float]:
    """Phoneme-level, speaker-normalized log-f0 of one utterance.

    Without a speaker mean, the mean over this utterance's voiced frames is used.
    """
    try:
        log_f0 = interpolate_log_f0(record.frame_f0, record.voicing)
    except PipelineError as ex:
        raise PipelineError(f"{record.utt_id}: {ex}") from ex
    if speaker_mean is None:
        speaker_mean = speaker_log_f0_means([record])[record.speaker]
    normalized = log_f0 - speaker_mean

    durations = duration_from_alignment(record)
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
    averages = np.add.reduceat(normalized, starts) / np.asarray(durations)
    return [float(v) for v in averages]


def ingest_frame_records(
    records: List[FrameRecord], speaker_means: Optional[Dict[int, float]] = None
) -> List[UtteranceRecord]:
    """Turns frame-level records into phoneme-level utterance records.

    Speaker means default to those of the given records, which should be the
    training split.
    """
    means = speaker_means if speaker_means is not None else speaker_log_f0_means(records)
    utterances = []
    for record in records:
        if record.speaker not in means:
            raise PipelineError(f"{record.utt_id}: no log-f0 mean for speaker {record.speaker}")
        utterances.append(
            UtteranceRecord(
                utt_id=record.utt_id,
                phonemes=list(record.phonemes),
                style=record.style,
                speaker=record.speaker,
                log_f0=f0_pipeline(record, means[record.speaker]),
                duration=duration_from_alignment(record),
            )
        )
    logger.info(f"Ingested {len(utterances)} utterances from {len(means)} speakers")
    return utterances
