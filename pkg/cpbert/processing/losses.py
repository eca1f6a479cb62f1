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

import torch
import torch.nn.functional as F

from cpbert.utils import constants
from cpbert.model.heads import local_rows

logger = logging.getLogger(__name__)


def token_loss(token_logits, clean_ids, corrupted):
    """Mean over corrupted positions of the summed per-attribute cross-entropy."""
    n = int(corrupted.sum())
    reference = token_logits[constants.ATTRIBUTES[0]]
    if n == 0:
        logger.warning("Empty corruption set; token loss is 0")
        return reference.new_zeros(()), 0
    total = reference.new_zeros(())
    for i, attr in enumerate(constants.ATTRIBUTES):
        total = total + F.cross_entropy(token_logits[attr][corrupted],
            clean_ids[..., i][corrupted], reduction="sum")
    return total / n, n


def note_pianoroll_loss(pr_hat, cm_hat, pr, cm, pos):
    """Per-note sum of the four mean-squared-error terms, shape (...)."""
    pr = pr.to(pr_hat.dtype)
    cm = cm.to(cm_hat.dtype)
    bar_pr = (pr_hat - pr).pow(2).mean(dim=(-2, -1))
    bar_cm = (cm_hat - cm).pow(2).mean(dim=(-2, -1))
    local_pr = (local_rows(pr_hat, pos) - local_rows(pr, pos)).pow(2).mean(dim=-1)
    local_cm = (local_rows(cm_hat, pos) - local_rows(cm, pos)).pow(2).mean(dim=-1)
    return bar_pr + bar_cm + local_pr + local_cm


def pianoroll_loss(pr_hat, cm_hat, pr, cm, pos, pad_mask):
    valid = ~pad_mask
    per_note = note_pianoroll_loss(pr_hat, cm_hat, pr, cm, pos)
    if not bool(valid.any()):
        return per_note.new_zeros(())
    return per_note[valid].mean()


def pretrain_loss(outputs, batch):
    """Token reconstruction loss plus pianoroll loss, equally weighted.

    Returns (total, components) with components as python floats."""
    tok, n_corrupted = token_loss(outputs.token_logits, batch.clean_ids, batch.corrupted)
    if outputs.pianoroll is not None:
        roll = pianoroll_loss(outputs.pianoroll, outputs.chroma,
            batch.pianoroll, batch.chroma, batch.pos, batch.pad_mask)
    else:
        roll = tok.new_zeros(())
    total = tok + roll
    return total, {
        "loss": float(total.detach()),
        "token_loss": float(tok.detach()),
        "pianoroll_loss": float(roll.detach()),
        "n_corrupted": n_corrupted,
    }


def reconstruction_counts(outputs, batch):
    """Correct-token counts over corrupted positions.

    A token counts as correct when all four attributes are recovered."""
    corrupted = batch.corrupted
    counts = {"n": int(corrupted.sum())}
    all_correct = None
    for i, attr in enumerate(constants.ATTRIBUTES):
        pred = outputs.token_logits[attr].argmax(dim=-1)
        hit = (pred == batch.clean_ids[..., i]) & corrupted
        counts[attr] = int(hit.sum())
        all_correct = hit if all_correct is None else all_correct & hit
    counts["token"] = int(all_correct.sum())
    return counts


def reconstruction_accuracy(outputs, batch):
    counts = reconstruction_counts(outputs, batch)
    n = max(counts["n"], 1)
    return {key: counts[key] / n for key in ("token",) + constants.ATTRIBUTES}
