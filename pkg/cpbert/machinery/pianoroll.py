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
import logging
from dataclasses import dataclass

import numpy as np

from cpbert.utils import constants

logger = logging.getLogger(__name__)

PIT_LOW = constants.ATTR_LOW["pit"]
# column c of a chromagram collects pianoroll columns with (c_pr + 22) % 12 == c
CHROMA_OF_COLUMN = (np.arange(constants.N_PITCHES) + PIT_LOW) % constants.N_CHROMA


@dataclass(frozen=True)
class PianorollTarget:
    pianoroll: np.ndarray   # (16, 86) uint8
    chroma: np.ndarray      # (16, 12) uint8
    pos: int


def sounding_tatums(dur):
    """A duration of d eighth-of-crotchet units covers ceil(d / 2) tatums."""
    return -(-dur // constants.DUR_PER_TATUM)


def fold_chroma(pianoroll):
    chroma = np.zeros((pianoroll.shape[0], constants.N_CHROMA), dtype=pianoroll.dtype)
    for c in range(constants.N_CHROMA):
        cols = pianoroll[:, CHROMA_OF_COLUMN == c]
        if cols.shape[1]:
            chroma[:, c] = cols.max(axis=1)
    return chroma


def bar_pianoroll(tokens):
    """Binary (16, 86) pianoroll of one bar; sustains are cut at the barline."""
    roll = np.zeros((constants.TATUMS_PER_BAR, constants.N_PITCHES), dtype=np.uint8)
    for token in tokens:
        start = token.pos
        stop = min(constants.TATUMS_PER_BAR, start + sounding_tatums(token.dur))
        roll[start:stop, token.pit - PIT_LOW] = 1
    return roll


def build_targets(segment):
    """Per-note bar-level targets from the clean tokens only."""
    by_bar = {}
    for token, bar in zip(segment.clean_tokens, segment.bar_index):
        by_bar.setdefault(bar, []).append(token)

    shared = {}
    for bar, tokens in by_bar.items():
        roll = bar_pianoroll(tokens)
        roll.setflags(write=False)
        chroma = fold_chroma(roll)
        chroma.setflags(write=False)
        shared[bar] = (roll, chroma)

    return [PianorollTarget(shared[bar][0], shared[bar][1], token.pos)
        for token, bar in zip(segment.clean_tokens, segment.bar_index)]


def stack_targets(targets, length=None):
    """(length, 16, 86), (length, 16, 12), (length,) arrays; rows past the
    targets stay zero."""
    length = len(targets) if length is None else length
    pr = np.zeros((length, constants.TATUMS_PER_BAR, constants.N_PITCHES), dtype=np.float32)
    cm = np.zeros((length, constants.TATUMS_PER_BAR, constants.N_CHROMA), dtype=np.float32)
    pos = np.zeros((length,), dtype=np.int64)
    for i, target in enumerate(targets):
        pr[i] = target.pianoroll
        cm[i] = target.chroma
        pos[i] = target.pos
    return pr, cm, pos
