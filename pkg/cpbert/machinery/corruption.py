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
import math
import logging
from dataclasses import dataclass, asdict
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from cpbert.utils import constants
from cpbert.machinery.tokens import CPToken, DEFAULT_VOCAB

logger = logging.getLogger(__name__)


@dataclass
class CorruptionConfig:
    ratio: float = 0.30
    mode: str = constants.RC_MODE
    # None means unbounded (the whole attribute domain)
    r_pos: Optional[int] = 4
    r_pit: Optional[int] = 12
    r_dur: Optional[int] = 12
    seed: int = 0
    inclusive_upper: bool = False
    mask_prob: float = 0.8
    random_prob: float = 0.1

    def __post_init__(self):
        if not 0 <= self.ratio <= 1:
            raise CorruptionError("ratio must lie in [0, 1]")
        if self.mode not in constants.CORRUPTION_MODES:
            raise CorruptionError("Unknown corruption mode: %s" % self.mode)
        for name in ("r_pos", "r_pit", "r_dur"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise CorruptionError("%s must be non-negative" % name)
        if self.mask_prob < 0 or self.random_prob < 0 \
                or self.mask_prob + self.random_prob > 1:
            raise CorruptionError("MLM probabilities must sum to at most 1")

    def ranges(self):
        if self.mode == constants.RC_INF_MODE:
            return {"pos": None, "pit": None, "dur": None}
        return {"pos": self.r_pos, "pit": self.r_pit, "dur": self.r_dur}

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CorruptionRecord:
    corrupted_indices: Tuple[int, ...]
    originals: Tuple[CPToken, ...]
    mode: str


def n_corrupted(n_tokens, ratio):
    return math.floor(Fraction(repr(float(ratio))) * n_tokens)


def sample_corruption_set(n_tokens, config, rng):
    """Exactly floor(ratio * n) distinct indices, uniformly, sorted."""
    if n_tokens < 1:
        raise CorruptionError("n_tokens must be >= 1")
    k = n_corrupted(n_tokens, config.ratio)
    if k == 0:
        return ()
    return tuple(sorted(int(i) for i in rng.choice(n_tokens, size=k, replace=False)))


def _check_indices(segment, indices):
    for idx in indices:
        if not 0 <= idx < len(segment):
            raise CorruptionError("index %d out of range for segment of %d tokens"
                % (idx, len(segment)))


def _rand(rng, low, high):
    """Integer from [low, high); empty intervals keep nothing to draw."""
    if high <= low:
        return None
    return int(rng.integers(low, high))


def perturb_attribute(rng, value, attr, radius, inclusive_upper=False, vocab=DEFAULT_VOCAB):
    low, high = vocab.low(attr), vocab.high(attr)
    if radius is None:
        return int(rng.integers(low, high + 1))
    upper = value + radius + (1 if inclusive_upper else 0)
    x = max(low, min(high, value - radius))
    y = max(low, min(high + 1 if inclusive_upper else high, upper))
    drawn = _rand(rng, x, y)
    return value if drawn is None else drawn


def _audit(audit, segment, idx, old, new):
    if audit is None:
        return
    for attr, a, b in zip(constants.ATTRIBUTES, old, new):
        if a != b:
            audit.append({"segment": "%s#%d" % (segment.piece_id, segment.ordinal),
                "index": idx, "attribute": attr, "old": a, "new": b})


def corrupt_rc(segment, indices, config, rng, audit=None, vocab=DEFAULT_VOCAB):
    """Bounded random perturbation of the selected tokens."""
    if config.mode not in (constants.RC_MODE, constants.RC_INF_MODE):
        raise CorruptionError("corrupt_rc needs mode rc or rc-inf, got %s" % config.mode)
    _check_indices(segment, indices)

    ranges = config.ranges()
    tokens = list(segment.tokens)
    for idx in indices:
        old = tokens[idx]
        b = int(rng.integers(0, 2))
        pos = perturb_attribute(rng, old.pos, "pos", ranges["pos"], config.inclusive_upper, vocab)
        pit = perturb_attribute(rng, old.pit, "pit", ranges["pit"], config.inclusive_upper, vocab)
        dur = perturb_attribute(rng, old.dur, "dur", ranges["dur"], config.inclusive_upper, vocab)
        tokens[idx] = CPToken(b, pos, pit, dur)
        _audit(audit, segment, idx, old, tokens[idx])

    record = CorruptionRecord(tuple(indices),
        tuple(segment.clean_tokens[i] for i in indices), config.mode)
    return segment.with_tokens(tokens), record


def corrupt_mlm(segment, indices, rng, config=None, audit=None, vocab=DEFAULT_VOCAB):
    """BERT-style 80/10/10 masking of the selected tokens."""
    config = config or CorruptionConfig(mode=constants.MLM_MODE)
    if config.mode != constants.MLM_MODE:
        raise CorruptionError("corrupt_mlm needs mode mlm, got %s" % config.mode)
    _check_indices(segment, indices)

    mask = vocab.mask_token()
    tokens = list(segment.tokens)
    for idx in indices:
        old = tokens[idx]
        u = rng.random()
        if u < config.mask_prob:
            tokens[idx] = mask
        elif u < config.mask_prob + config.random_prob:
            tokens[idx] = CPToken(*[int(rng.integers(vocab.low(a), vocab.high(a) + 1))
                for a in constants.ATTRIBUTES])
        _audit(audit, segment, idx, old, tokens[idx])

    record = CorruptionRecord(tuple(indices),
        tuple(segment.clean_tokens[i] for i in indices), config.mode)
    return segment.with_tokens(tokens), record


def corrupt_segment(segment, config, rng, audit=None, vocab=DEFAULT_VOCAB):
    indices = sample_corruption_set(len(segment), config, rng)
    if config.mode == constants.MLM_MODE:
        return corrupt_mlm(segment, indices, rng, config, audit, vocab)
    return corrupt_rc(segment, indices, config, rng, audit, vocab)


def segment_rng(seed, ordinal, epoch=0):
    """Per-segment generator: seed xor ordinal, with the epoch as a second entropy word."""
    return np.random.default_rng([(seed ^ ordinal) & 0xFFFFFFFFFFFFFFFF, epoch])


class CorruptionError(Exception):
    pass
