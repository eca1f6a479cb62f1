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
from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

from cpbert.utils import constants
from cpbert.machinery.tokens import VocabSpec, DEFAULT_VOCAB

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    n_layers: int = 12
    d_model: int = 768
    n_heads: int = 12
    ffn_dim: int = 1152
    rope_base: float = 10000.0
    # when set, odd layers attend only within +-local_window//2 positions
    local_window: Optional[int] = None
    dropout: float = 0.0
    emb_dims: Tuple[int, ...] = (256, 256, 256, 256)
    max_len: int = constants.DEFAULT_MAX_LEN
    final_norm: bool = True
    pianoroll: bool = True
    vocab: VocabSpec = field(default_factory=VocabSpec)

    def __post_init__(self):
        self.emb_dims = tuple(int(d) for d in self.emb_dims)
        if isinstance(self.vocab, dict):
            self.vocab = VocabSpec(**self.vocab)
        if len(self.emb_dims) != len(constants.ATTRIBUTES):
            raise EncoderError("emb_dims needs one entry per token attribute")
        for name in ("n_layers", "d_model", "n_heads", "ffn_dim", "max_len"):
            if getattr(self, name) < 1:
                raise EncoderError("%s must be >= 1" % name)
        if min(self.emb_dims) < 1:
            raise EncoderError("embedding dims must be >= 1")
        if self.d_model % self.n_heads:
            raise EncoderError("d_model %d is not divisible by n_heads %d"
                % (self.d_model, self.n_heads))
        if self.head_dim % 2:
            raise EncoderError("rotary encoding needs an even head dimension")
        if self.local_window is not None and self.local_window < 1:
            raise EncoderError("local_window must be >= 1")
        if not 0 <= self.dropout < 1:
            raise EncoderError("dropout must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        d = asdict(self)
        d["emb_dims"] = list(self.emb_dims)
        d["vocab"] = self.vocab.to_dict()
        return d


def rotary_tables(positions, dim, base, dtype=torch.float32):
    inv_freq = 1.0 / (base ** (torch.arange(0, dim, 2, dtype=torch.float64) / dim))
    angles = positions.to(torch.float64)[:, None] * inv_freq[None, :]
    return torch.cos(angles).to(dtype), torch.sin(angles).to(dtype)


def apply_rotary(x, cos, sin):
    """Rotate consecutive feature pairs of x (..., n, dim) by per-position angles."""
    x_even = x[..., 0::2]
    x_odd = x[..., 1::2]
    rotated = torch.stack((x_even * cos - x_odd * sin,
                           x_even * sin + x_odd * cos), dim=-1)
    return rotated.flatten(-2)


class CPEmbedding(nn.Module):
    """Per-attribute lookups, concatenated and projected to d_model."""

    def __init__(self, config):
        super().__init__()
        self.vocab = config.vocab
        self.tables = nn.ModuleList([
            nn.Embedding(config.vocab.size(attr), dim)
            for attr, dim in zip(constants.ATTRIBUTES, config.emb_dims)])
        self.proj = nn.Linear(sum(config.emb_dims), config.d_model)
        for table in self.tables:
            nn.init.normal_(table.weight, mean=0.0, std=0.02)
        self.register_buffer("pad_ids",
            torch.tensor(config.vocab.pad_ids(), dtype=torch.long), persistent=False)
        self.register_buffer("sizes",
            torch.tensor([config.vocab.size(a) for a in constants.ATTRIBUTES],
            dtype=torch.long), persistent=False)

    def forward(self, ids):
        if ids.dim() != 3 or ids.shape[-1] != len(constants.ATTRIBUTES):
            raise EncoderError("token ids must have shape (batch, length, 4)")
        if ids.numel() and (bool((ids < 0).any()) or bool((ids >= self.sizes).any())):
            raise EncoderError("attribute id outside the vocabulary")
        parts = [table(ids[..., i]) for i, table in enumerate(self.tables)]
        pad_mask = (ids == self.pad_ids).all(dim=-1)
        return self.proj(torch.cat(parts, dim=-1)), pad_mask


class SelfAttention(nn.Module):
    def __init__(self, config, local=False):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.head_dim
        self.rope_base = config.rope_base
        self.window = config.local_window if local else None
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.out = nn.Linear(config.d_model, config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def _project(self, x, positions):
        batch, length, _ = x.shape
        qkv = self.qkv(x).view(batch, length, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        cos, sin = rotary_tables(positions, self.head_dim, self.rope_base, x.dtype)
        return apply_rotary(q, cos, sin), apply_rotary(k, cos, sin), v

    def blocked(self, pad_mask, positions):
        """(batch, 1, n, n) True where a query may not attend a key."""
        blocked = pad_mask[:, None, None, :]
        if self.window is not None:
            dist = (positions[:, None] - positions[None, :]).abs()
            blocked = blocked | (dist > self.window // 2)[None, None]
        return blocked

    def weights(self, x, pad_mask, positions):
        q, k, v = self._project(x, positions)
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(self.blocked(pad_mask, positions),
            torch.finfo(scores.dtype).min)
        return torch.softmax(scores, dim=-1), v

    def forward(self, x, pad_mask, positions):
        weights, v = self.weights(x, pad_mask, positions)
        context = torch.matmul(self.dropout(weights), v)
        batch, _, length, _ = context.shape
        context = context.transpose(1, 2).reshape(batch, length, -1)
        return self.out(context)


class GatedFeedForward(nn.Module):
    """GeGLU: gelu(x W_a) * (x W_b), projected back."""

    def __init__(self, config):
        super().__init__()
        self.wi = nn.Linear(config.d_model, 2 * config.ffn_dim)
        self.wo = nn.Linear(config.ffn_dim, config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x):
        gate, value = self.wi(x).chunk(2, dim=-1)
        return self.wo(self.dropout(F.gelu(gate) * value))


class EncoderLayer(nn.Module):
    def __init__(self, config, local=False):
        super().__init__()
        self.attn_norm = nn.LayerNorm(config.d_model)
        self.attn = SelfAttention(config, local)
        self.ffn_norm = nn.LayerNorm(config.d_model)
        self.ffn = GatedFeedForward(config)

    def forward(self, x, pad_mask, positions):
        x = x + self.attn(self.attn_norm(x), pad_mask, positions)
        return x + self.ffn(self.ffn_norm(x))


class Encoder(nn.Module):
    """Bidirectional pre-norm transformer over CP token ids."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.embedding = CPEmbedding(config)
        self.layers = nn.ModuleList([
            EncoderLayer(config, local=config.local_window is not None and i % 2 == 1)
            for i in range(config.n_layers)])
        self.norm = nn.LayerNorm(config.d_model) if config.final_norm else nn.Identity()

    def embed(self, ids):
        return self.embedding(ids)

    def forward(self, ids, positions=None):
        x, pad_mask = self.embed(ids)
        if positions is None:
            positions = torch.arange(ids.shape[1], device=ids.device)
        if ids.shape[1] > self.config.max_len:
            raise EncoderError("sequence of %d tokens exceeds max_len %d"
                % (ids.shape[1], self.config.max_len))
        for layer in self.layers:
            x = layer(x, pad_mask, positions)
        x = self.norm(x)
        if not bool(torch.isfinite(x).all()):
            raise EncoderError("non-finite activations in encoder output")
        return x, pad_mask


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def segment_tensor(segment, vocab=DEFAULT_VOCAB):
    return torch.as_tensor(segment.ids(vocab))[None]


class EncoderError(Exception):
    pass
