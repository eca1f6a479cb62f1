#
# Copyright (c) 2025 The cpbert Authors.
#
# Licensed to the Apache Software Foundation (ASF) under one
# or more contributor license agreements.  See the NOTICE file
# distributed with this work for additional information
# regarding copyright ownership.  The ASF licenses this file
# to you under the Apache License, Version 2.0 (the
# "License"); you may not use this file except in compliance
# with the License.  You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing,
# software distributed under the License is distributed on an
# "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, either express or implied.  See the License for the
# specific language governing permissions and limitations
# under the License.
#
import os
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Tuple

from cpbert import utils
from cpbert.utils import constants

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Note:
    """A note with times in crotchet beats (or seconds) as exact rationals."""
    onset: Fraction
    duration: Fraction
    pitch: int
    velocity: Optional[int] = None
    track: int = 0

    @property
    def offset(self):
        return self.onset + self.duration

    def sort_key(self):
        return (self.onset, self.pitch, self.track)


@dataclass(frozen=True)
class Score:
    notes: Tuple[Note, ...] = ()
    downbeats: Tuple[Fraction, ...] = ()
    time_unit: str = constants.BEATS_UNIT
    source_meta: dict = field(default_factory=dict, compare=False)

    def is_beats(self):
        return self.time_unit == constants.BEATS_UNIT

    def end(self):
        if not self.notes:
            return Fraction(0)
        return max(n.offset for n in self.notes)

    def with_notes(self, notes):
        return replace(self, notes=tuple(notes))


def validate_score(score):
    """Sort notes by (onset, pitch, track) and check every Score invariant.

    Returns a new Score; validating a valid score returns an equal one."""
    if score.time_unit not in constants.TIME_UNITS:
        raise ScoreError("Unknown time unit: %s" % score.time_unit)

    downbeats = tuple(utils.to_fraction(d) for d in score.downbeats)
    for i in range(1, len(downbeats)):
        if downbeats[i] <= downbeats[i - 1]:
            raise ScoreError(
                "downbeats not strictly increasing at index %d" % i)

    notes = sorted(score.notes, key=Note.sort_key)
    for idx, note in enumerate(notes):
        if note.duration <= 0:
            raise ScoreError("non-positive duration at note %d" % idx)
        if not 0 <= note.pitch <= 127:
            raise ScoreError("pitch %d out of range at note %d" % (note.pitch, idx))
        if note.onset < 0:
            raise ScoreError("negative onset at note %d" % idx)
        if note.velocity is not None and not 1 <= note.velocity <= 127:
            raise ScoreError(
                "velocity %d out of range at note %d" % (note.velocity, idx))
        if downbeats and note.onset < downbeats[0]:
            raise ScoreError("note %d starts before the first downbeat" % idx)

    return Score(tuple(notes), downbeats, score.time_unit, dict(score.source_meta))


def _number(record, key, idx, required=True):
    value = record.get(key)
    if value is None:
        if required:
            raise ScoreError("note %d: missing field '%s'" % (idx, key))
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScoreError("note %d: field '%s' must be a number" % (idx, key))
    return value


def _integer(record, key, idx, required=True):
    value = _number(record, key, idx, required)
    if value is None:
        return None
    if isinstance(value, float):
        if not value.is_integer():
            raise ScoreError("note %d: field '%s' must be an integer" % (idx, key))
        value = int(value)
    return value


def parse_text_score(text, source=None):
    """Parse the JSON score schema into a validated Score."""
    try:
        doc = json.loads(text)
    except ValueError as e:
        raise ScoreError("Invalid score document: %s" % e) from e

    if not isinstance(doc, dict):
        raise ScoreError("Score document must be an object")
    unknown = set(doc) - {"time_unit", "downbeats", "notes"}
    if unknown:
        raise ScoreError("Unknown score fields: %s" % ", ".join(sorted(unknown)))

    time_unit = doc.get("time_unit", constants.BEATS_UNIT)
    if time_unit not in constants.TIME_UNITS:
        raise ScoreError("Unknown time unit: %s" % time_unit)

    downbeats = doc.get("downbeats", [])
    if not isinstance(downbeats, list):
        raise ScoreError("'downbeats' must be a list")
    for d in downbeats:
        if isinstance(d, bool) or not isinstance(d, (int, float)):
            raise ScoreError("downbeats must be numbers")

    records = doc.get("notes")
    if not isinstance(records, list):
        raise ScoreError("'notes' must be a list")

    notes = []
    for idx, record in enumerate(records):
        if not isinstance(record, dict):
            raise ScoreError("note %d must be an object" % idx)
        extra = set(record) - {"onset", "duration", "pitch", "velocity", "track"}
        if extra:
            raise ScoreError("note %d: unknown fields %s" % (idx, ", ".join(sorted(extra))))
        duration = utils.to_fraction(_number(record, "duration", idx))
        if duration <= 0:
            raise ScoreError("non-positive duration at note %d" % idx)
        track = _integer(record, "track", idx, required=False)
        notes.append(Note(
            onset=utils.to_fraction(_number(record, "onset", idx)),
            duration=duration,
            pitch=_integer(record, "pitch", idx),
            velocity=_integer(record, "velocity", idx, required=False),
            track=0 if track is None else track))

    meta = {"format": "text"}
    if source:
        meta["source"] = source
    return validate_score(Score(tuple(notes),
        tuple(utils.to_fraction(d) for d in downbeats), time_unit, meta))


def score_to_text(score):
    """Inverse of parse_text_score for beat and seconds scores alike."""
    def num(value):
        value = utils.to_fraction(value)
        if value.denominator == 1:
            return int(value)
        return float(value)

    notes = []
    for note in score.notes:
        record = {"onset": num(note.onset), "duration": num(note.duration),
                  "pitch": note.pitch}
        if note.velocity is not None:
            record["velocity"] = note.velocity
        if note.track:
            record["track"] = note.track
        notes.append(record)
    return json.dumps({"time_unit": score.time_unit,
                       "downbeats": [num(d) for d in score.downbeats],
                       "notes": notes}, sort_keys=True)


def load_score(path):
    from cpbert.machinery.midi import parse_smf

    ext = os.path.splitext(path)[1].lower()
    if ext in (".mid", ".midi"):
        with open(path, "rb") as f:
            return parse_smf(f.read(), source=path)
    if ext == ".json":
        with open(path, "r", encoding="utf-8") as f:
            return parse_text_score(f.read(), source=path)
    raise ScoreError("Unsupported score file: %s" % path)


class ScoreError(Exception):
    pass
