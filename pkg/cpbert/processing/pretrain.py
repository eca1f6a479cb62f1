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

import numpy as np
import torch

from cpbert import utils
from cpbert.utils import constants
from cpbert.machinery.tokens import segment as make_segments
from cpbert.machinery.metrics import MetricsLog
from cpbert.model.heads import PretrainModel, seeded
from cpbert.processing.batching import corrupt_batch, BatchPrefetcher
from cpbert.processing.losses import pretrain_loss, reconstruction_counts
from cpbert.processing.optimizer import StableAdamW, TrainingError, DivergenceError

logger = logging.getLogger(__name__)

VALID_EPOCH = 0


@dataclass
class ScheduleConfig:
    steps: int = 1000
    batch_size: int = 12
    eval_interval: int = 100
    eval_batch_size: int = 12
    valid_fraction: float = 0.15
    max_len: int = constants.DEFAULT_MAX_LEN
    # background batch production depth; 0 builds batches inline
    prefetch: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise TrainingError("steps must be >= 0")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise TrainingError("batch sizes must be >= 1")
        if self.eval_interval < 1:
            raise TrainingError("eval_interval must be >= 1")
        if not 0 <= self.valid_fraction < 1:
            raise TrainingError("valid_fraction must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_accuracy: float = -1.0
    best_step: int = -1
    nonfinite_streak: int = 0


def split_pieces(piece_ids, valid_fraction, seed):
    """Seeded piece-level split into (train, valid)."""
    ids = list(piece_ids)
    if not ids:
        raise TrainingError("empty corpus")
    order = np.random.default_rng(utils.derive_seed(seed, 85)).permutation(len(ids))
    n_valid = int(round(len(ids) * valid_fraction))
    if len(ids) > 1:
        n_valid = min(max(n_valid, 1 if valid_fraction > 0 else 0), len(ids) - 1)
    else:
        n_valid = 0
    valid = [ids[i] for i in sorted(order[:n_valid])]
    train = [ids[i] for i in sorted(order[n_valid:])]
    return train, valid


def snapshot(model, optimizer):
    tensors = {name: t.detach().clone() for name, t in model.state_dict().items()}
    named = list(model.named_parameters())
    for name, t in optimizer.named_moments(named).items():
        tensors["optim/" + name] = t.detach().clone()
    return tensors, optimizer.step_counts(named)


class Pretrainer(object):
    def __init__(self, corpus, model_config, optimizer_config, corruption_config,
            schedule, seed, log=None, audit=None):
        self.corpus = list(corpus)
        self.model_config = model_config
        self.optimizer_config = optimizer_config
        self.corruption_config = corruption_config
        self.schedule = schedule
        self.seed = seed
        self.log = log if log is not None else MetricsLog()
        self.audit = audit
        self.state = TrainState()
        self.best = None
        self.setUp()

    def setUp(self):
        if not self.corpus:
            raise TrainingError("empty corpus")
        if self.schedule.max_len > self.model_config.max_len:
            raise TrainingError("segment length %d exceeds model max_len %d"
                % (self.schedule.max_len, self.model_config.max_len))

        pieces = dict(self.corpus)
        train_ids, valid_ids = split_pieces([p for p, _ in self.corpus],
            self.schedule.valid_fraction, self.seed)
        if not valid_ids:
            logger.warning("Corpus too small for a validation split; "
                "validating on the training pieces")
            valid_ids = train_ids
        logger.info("Split %d pieces into %d train / %d valid",
            len(pieces), len(train_ids), len(valid_ids))

        self.train_segments = self._segments(pieces, train_ids)
        self.valid_segments = self._segments(pieces, valid_ids)
        if not self.train_segments:
            raise TrainingError("no training segments (all pieces empty)")

        self.vocab = self.model_config.vocab
        self.model = seeded(PretrainModel, self.seed, self.model_config)
        self.optimizer = StableAdamW(self.model.parameters(), self.optimizer_config)
        self.valid_batches = self._valid_batches()

    def _segments(self, pieces, ids):
        segments = []
        for piece_id in ids:
            segments.extend(make_segments(pieces[piece_id], self.schedule.max_len, piece_id))
        return segments

    def _valid_batches(self):
        batches = []
        size = self.schedule.eval_batch_size
        for start in range(0, len(self.valid_segments), size):
            chunk = self.valid_segments[start:start + size]
            ordinals = [(1 << 32) + start + i for i in range(len(chunk))]
            batches.append(corrupt_batch(chunk, ordinals, self.corruption_config,
                VALID_EPOCH, self.vocab, with_targets=self.model_config.pianoroll))
        return batches

    def _jobs(self):
        """(epoch, segment ordinals) per step, epochs reshuffled by seed."""
        jobs = []
        order, cursor, epoch = None, 0, 0
        n = len(self.train_segments)
        size = min(self.schedule.batch_size, n)
        for _ in range(self.schedule.steps):
            if order is None or cursor + size > n:
                epoch = 0 if order is None else epoch + 1
                order = np.random.default_rng(
                    utils.derive_seed(self.seed, epoch)).permutation(n)
                cursor = 0
            jobs.append((epoch + 1, [int(i) for i in order[cursor:cursor + size]]))
            cursor += size
        return jobs

    def _produce(self, job):
        epoch, ordinals = job
        segments = [self.train_segments[i] for i in ordinals]
        batch = corrupt_batch(segments, ordinals, self.corruption_config, epoch,
            self.vocab, with_targets=self.model_config.pianoroll, audit=self.audit)
        return epoch, batch

    @torch.no_grad()
    def evaluate(self):
        self.model.eval()
        totals = {"n": 0, "token": 0, "b": 0, "pos": 0, "pit": 0, "dur": 0}
        losses = {"loss": 0.0, "token_loss": 0.0, "pianoroll_loss": 0.0}
        weight = 0
        for batch in self.valid_batches:
            outputs = self.model(batch.ids)
            _, components = pretrain_loss(outputs, batch)
            counts = reconstruction_counts(outputs, batch)
            for key in totals:
                totals[key] += counts[key]
            notes = int((~batch.pad_mask).sum())
            for key in losses:
                losses[key] += components[key] * notes
            weight += notes

        n = max(totals["n"], 1)
        metrics = {"accuracy": totals["token"] / n}
        for attr in constants.ATTRIBUTES:
            metrics["accuracy_" + attr] = totals[attr] / n
        for key in losses:
            metrics[key] = losses[key] / max(weight, 1)
        return metrics

    def _consider(self, metrics):
        self.log.add_all(self.state.step, constants.VALID_SPLIT, metrics)
        accuracy = metrics["accuracy"]
        logger.info("step %d: valid accuracy %.4f, loss %.4f",
            self.state.step, accuracy, metrics["loss"])
        if accuracy > self.state.best_accuracy:
            self.state.best_accuracy = accuracy
            self.state.best_step = self.state.step
            tensors, steps = snapshot(self.model, self.optimizer)
            self.best = {"tensors": tensors, "optimizer_steps": steps,
                         "metrics": dict(metrics), "step": self.state.step}

    def _train_step(self, batch):
        self.model.train()
        outputs = self.model(batch.ids)
        loss, components = pretrain_loss(outputs, batch)

        if not math.isfinite(components["loss"]):
            self.state.nonfinite_streak += 1
            if self.state.nonfinite_streak >= 2:
                raise DivergenceError("non-finite loss twice in a row at step %d"
                    % self.state.step)
            logger.warning("Non-finite loss at step %d; skipping update", self.state.step)
            return components
        self.state.nonfinite_streak = 0

        self.optimizer.zero_grad(set_to_none=True)
        if loss.requires_grad:
            loss.backward()
            self.optimizer.step()
        return components

    def train(self):
        torch.manual_seed(utils.derive_seed(self.seed, 7) & 0x7FFFFFFFFFFFFFFF)
        self._consider(self.evaluate())

        jobs = self._jobs()
        if self.schedule.prefetch > 0:
            batches = BatchPrefetcher(self._produce, jobs, self.schedule.prefetch)
        else:
            batches = (self._produce(job) for job in jobs)

        try:
            for epoch, batch in batches:
                self.state.epoch = epoch
                components = self._train_step(batch)
                self.state.step += 1
                self.log.add_all(self.state.step, constants.TRAIN_SPLIT,
                    {k: components[k] for k in ("loss", "token_loss", "pianoroll_loss")})
                if self.state.step % self.schedule.eval_interval == 0 \
                        or self.state.step == self.schedule.steps:
                    self._consider(self.evaluate())
        finally:
            batches.close()
        return self.checkpoint()

    def checkpoint(self):
        """(tensors, config, meta) of the best validation snapshot."""
        meta = {
            "kind": "pretrain",
            "seed": self.seed,
            "step": self.best["step"],
            "best_valid_accuracy": self.state.best_accuracy,
            "best_valid_metrics": self.best["metrics"],
            "optimizer_steps": self.best["optimizer_steps"],
            "optimizer": self.optimizer_config.to_dict(),
            "corruption": self.corruption_config.to_dict(),
            "schedule": self.schedule.to_dict(),
            "train_pieces": sorted({s.piece_id for s in self.train_segments}),
        }
        return self.best["tensors"], self.model_config.to_dict(), meta


def pretrain(corpus, model_config, optimizer_config, corruption_config, schedule, seed,
        log=None, audit=None):
    trainer = Pretrainer(corpus, model_config, optimizer_config, corruption_config,
        schedule, seed, log, audit)
    return trainer.train()
