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
from typing import Dict, Optional

import torch
from torch import nn

from cpbert.utils import constants
from cpbert.model.encoder import Encoder, EncoderError

logger = logging.getLogger(__name__)


class TokenHead(nn.Module):
    """G: one shared linear map whose output splits into per-attribute logits."""

    def __init__(self, config):
        super().__init__()
        self.sizes = config.vocab.cardinalities()
        self.linear = nn.Linear(config.d_model, sum(self.sizes))

    def forward(self, hidden):
        blocks = torch.split(self.linear(hidden), self.sizes, dim=-1)
        return dict(zip(constants.ATTRIBUTES, blocks))


class PianorollHead(nn.Module):
    """Bar-level pianoroll and chroma regressors; local terms are row slices."""

    def __init__(self, config):
        super().__init__()
        self.pianoroll = nn.Linear(config.d_model, constants.TATUMS_PER_BAR * constants.N_PITCHES)
        self.chroma = nn.Linear(config.d_model, constants.TATUMS_PER_BAR * constants.N_CHROMA)

    def forward(self, hidden):
        shape = hidden.shape[:-1]
        pr = self.pianoroll(hidden).view(*shape, constants.TATUMS_PER_BAR, constants.N_PITCHES)
        cm = self.chroma(hidden).view(*shape, constants.TATUMS_PER_BAR, constants.N_CHROMA)
        return pr, cm


def local_rows(bar_matrix, pos):
    """bar_matrix (..., 16, k) indexed at row pos (...) -> (..., k)."""
    index = pos[..., None, None].expand(*pos.shape, 1, bar_matrix.shape[-1])
    return bar_matrix.gather(-2, index).squeeze(-2)


class NoteHead(nn.Module):
    """H for note-level tasks; no dropout."""

    def __init__(self, d_model, n_classes):
        super().__init__()
        self.linear = nn.Linear(d_model, n_classes)

    def forward(self, hidden, pad_mask=None):
        return self.linear(hidden)


class SequenceHead(nn.Module):
    """H for sequence-level tasks: attention-weighted average, then a linear map."""

    def __init__(self, d_model, n_classes, d_attn=None):
        super().__init__()
        d_attn = d_attn or d_model
        self.score_w = nn.Linear(d_model, d_attn)
        self.score_u = nn.Linear(d_attn, 1, bias=False)
        self.linear = nn.Linear(d_model, n_classes)

    def pool(self, hidden, pad_mask):
        if pad_mask is None:
            pad_mask = torch.zeros(hidden.shape[:-1], dtype=torch.bool, device=hidden.device)
        if bool(pad_mask.all(dim=-1).any()):
            raise EncoderError("sequence head needs at least one non-pad note")
        scores = self.score_u(torch.tanh(self.score_w(hidden))).squeeze(-1)
        scores = scores.masked_fill(pad_mask, torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=-1)
        return (weights[..., None] * hidden).sum(dim=-2), weights

    def forward(self, hidden, pad_mask=None):
        pooled, _ = self.pool(hidden, pad_mask)
        return self.linear(pooled)


@dataclass
class HeadOutputs:
    token_logits: Dict[str, torch.Tensor]
    pianoroll: Optional[torch.Tensor]
    chroma: Optional[torch.Tensor]
    hidden: torch.Tensor
    pad_mask: torch.Tensor


class PretrainModel(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.token_head = TokenHead(config)
        self.pianoroll_head = PianorollHead(config) if config.pianoroll else None

    def forward(self, ids):
        hidden, pad_mask = self.encoder(ids)
        pr = cm = None
        if self.pianoroll_head is not None:
            pr, cm = self.pianoroll_head(hidden)
        return HeadOutputs(self.token_head(hidden), pr, cm, hidden, pad_mask)


class FinetuneModel(nn.Module):
    def __init__(self, config, level, n_classes):
        super().__init__()
        if level not in (constants.NOTE_LEVEL, constants.SEQUENCE_LEVEL):
            raise EncoderError("Unknown task level: %s" % level)
        self.config = config
        self.level = level
        self.encoder = Encoder(config)
        if level == constants.NOTE_LEVEL:
            self.head = NoteHead(config.d_model, n_classes)
        else:
            self.head = SequenceHead(config.d_model, n_classes)

    def forward(self, ids):
        hidden, pad_mask = self.encoder(ids)
        return self.head(hidden, pad_mask), pad_mask


def seeded(builder, seed, *args, **kwargs):
    """Build a module under a fixed torch seed without touching the global stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return builder(*args, **kwargs)
