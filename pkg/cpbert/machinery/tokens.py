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
import bisect
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Tuple

import numpy as np

from cpbert import utils
from cpbert.utils import constants
from cpbert.machinery.scores import Note, Score, validate_score

logger = logging.getLogger(__name__)


class CPToken(NamedTuple):
    b: int
    pos: int
    pit: int
    dur: int


@dataclass(frozen=True)
class VocabSpec:
    """Per-attribute cardinalities; ids are value - low, then mask, then pad."""
    b: int = 2
    pos: int = 16
    pit: int = 86
    dur: int = 64

    def cardinality(self, attr):
        return getattr(self, attr)

    def cardinalities(self):
        return tuple(self.cardinality(a) for a in constants.ATTRIBUTES)

    def mask_id(self, attr):
        return self.cardinality(attr)

    def pad_id(self, attr):
        return self.cardinality(attr) + 1

    def size(self, attr):
        """Embedding table size including the mask and pad ids."""
        return self.cardinality(attr) + 2

    def low(self, attr):
        return constants.ATTR_LOW[attr]

    def high(self, attr):
        return constants.ATTR_LOW[attr] + self.cardinality(attr) - 1

    def mask_token(self):
        return CPToken(*[self.low(a) + self.mask_id(a) for a in constants.ATTRIBUTES])

    def pad_ids(self):
        return tuple(self.pad_id(a) for a in constants.ATTRIBUTES)

    def encode(self, token):
        return tuple(v - self.low(a) for a, v in zip(constants.ATTRIBUTES, token))

    def decode(self, ids):
        return CPToken(*[int(i) + self.low(a) for a, i in zip(constants.ATTRIBUTES, ids)])

    def is_clean(self, token):
        return all(self.low(a) <= v <= self.high(a)
            for a, v in zip(constants.ATTRIBUTES, token))

    def to_dict(self):
        return {a: self.cardinality(a) for a in constants.ATTRIBUTES}


DEFAULT_VOCAB = VocabSpec()


@dataclass(frozen=True)
class Segment:
    tokens: Tuple[CPToken, ...]
    bar_index: Tuple[int, ...]
    piece_id: str = ""
    clean_tokens: Tuple[CPToken, ...] = field(default=None)
    ordinal: int = 0

    def __post_init__(self):
        if self.clean_tokens is None:
            object.__setattr__(self, "clean_tokens", tuple(self.tokens))
        if len(self.tokens) != len(self.bar_index):
            raise TokenizerError("tokens and bar_index differ in length")
        if len(self.clean_tokens) != len(self.tokens):
            raise TokenizerError("clean_tokens and tokens differ in length")

    def __len__(self):
        return len(self.tokens)

    def with_tokens(self, tokens):
        return Segment(tuple(tokens), self.bar_index, self.piece_id,
            self.clean_tokens, self.ordinal)

    def ids(self, vocab=DEFAULT_VOCAB):
        return np.array([vocab.encode(t) for t in self.tokens], dtype=np.int64)\
            .reshape(len(self.tokens), len(constants.ATTRIBUTES))

    def clean_ids(self, vocab=DEFAULT_VOCAB):
        return np.array([vocab.encode(t) for t in self.clean_tokens], dtype=np.int64)\
            .reshape(len(self.tokens), len(constants.ATTRIBUTES))

    def pairs(self):
        return list(zip(self.clean_tokens, self.bar_index))


def _bar_lengths(downbeats):
    lengths = [downbeats[i + 1] - downbeats[i] for i in range(len(downbeats) - 1)]
    # the open-ended final bar repeats the preceding bar
    lengths.append(lengths[-1] if lengths else Fraction(constants.BAR_CROTCHETS))
    return lengths


def locate_bar(downbeats, lengths, onset):
    """(bar index, bar start) of an onset.

    Past the last downbeat the final bar length repeats, so every onset gets
    its own bar instead of piling up at the end."""
    last = len(downbeats) - 1
    if onset < downbeats[last]:
        m = max(bisect.bisect_right(downbeats, onset) - 1, 0)
        return m, downbeats[m]
    k = int((onset - downbeats[last]) // lengths[last])
    return last + k, downbeats[last] + k * lengths[last]


def rescale_bars(score):
    """Map every bar affinely onto a 4-crotchet bar."""
    if not score.is_beats():
        raise TokenizerError("rescale_bars needs a beat-unit score")
    if not score.downbeats:
        raise TokenizerError("empty downbeat list")

    downbeats = score.downbeats
    lengths = _bar_lengths(downbeats)
    bar = Fraction(constants.BAR_CROTCHETS)

    notes = []
    n_bars = len(downbeats)
    for note in score.notes:
        m, start = locate_bar(downbeats, lengths, note.onset)
        factor = bar / lengths[min(m, len(lengths) - 1)]
        notes.append(Note(
            onset=bar * m + (note.onset - start) * factor,
            duration=note.duration * factor,
            pitch=note.pitch, velocity=note.velocity, track=note.track))
        n_bars = max(n_bars, m + 1)

    new_downbeats = tuple(bar * m for m in range(n_bars))
    meta = dict(score.source_meta)
    meta["rescaled"] = True
    return validate_score(Score(tuple(notes), new_downbeats, score.time_unit, meta))


def tokenize(score):
    """Quantize a bar-normalized score into (CPToken, bar_index) pairs.

    A score without downbeats is read as 4/4 from time 0."""
    if not score.is_beats():
        raise TokenizerError("tokenize needs a beat-unit score")
    downbeats = score.downbeats or (Fraction(0),)
    lengths = _bar_lengths(downbeats)
    low, high = constants.ATTR_LOW, constants.ATTR_HIGH

    tokens = []
    prev_bar = None
    for note in score.notes:
        m, start = locate_bar(downbeats, lengths, note.onset)
        pos = utils.clamp(
            utils.round_half_up(constants.TATUMS_PER_BEAT * (note.onset - start)),
            low["pos"], high["pos"])
        dur = utils.clamp(
            utils.round_half_up(constants.DUR_PER_BEAT * note.duration),
            low["dur"], high["dur"])
        pit = utils.shift_octaves(note.pitch, low["pit"], high["pit"])
        b = 1 if m != prev_bar else 0
        prev_bar = m
        tokens.append((CPToken(b, pos, pit, dur), m))
    return tokens


def score_tokens(score):
    """Rescale (when the score has downbeats) and tokenize one piece."""
    if score.downbeats:
        return tokenize(rescale_bars(score))
    if score.notes:
        logger.warning("Score has no downbeats; reading it as 4/4 from time 0")
    return tokenize(score)


def segment(tokens, max_len=constants.DEFAULT_MAX_LEN, piece_id=""):
    """Split one piece's token list into consecutive windows of <= max_len."""
    if max_len < 1:
        raise TokenizerError("max_len must be >= 1")
    segments = []
    for ordinal, start in enumerate(range(0, len(tokens), max_len)):
        window = tokens[start:start + max_len]
        segments.append(Segment(
            tokens=tuple(t for t, _ in window),
            bar_index=tuple(int(m) for _, m in window),
            piece_id=piece_id, ordinal=ordinal))
    return segments


def detokenize(tokens):
    bar = constants.BAR_CROTCHETS
    notes = []
    last_bar = 0
    for token, m in tokens:
        notes.append(Note(
            onset=Fraction(bar * m) + Fraction(token.pos, constants.TATUMS_PER_BEAT),
            duration=Fraction(token.dur, constants.DUR_PER_BEAT),
            pitch=token.pit))
        last_bar = max(last_bar, m)
    downbeats = tuple(Fraction(bar * m) for m in range(last_bar + 1))
    return validate_score(Score(tuple(notes), downbeats, constants.BEATS_UNIT, {}))


def check_bar_flags(tokens):
    """b is 1 exactly on the first token of each bar."""
    prev = None
    for idx, (token, m) in enumerate(tokens):
        expected = 1 if m != prev else 0
        if token.b != expected:
            raise TokenizerError("bar flag mismatch at token %d" % idx)
        if prev is not None and m < prev:
            raise TokenizerError("bar_index decreases at token %d" % idx)
        prev = m


def score_to_segments(score, max_len=constants.DEFAULT_MAX_LEN, piece_id=""):
    return segment(score_tokens(score), max_len, piece_id)


class TokenizerError(Exception):
    pass
