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

import numpy as np
import torch
import torch.nn.functional as F

from cpbert import utils
from cpbert.utils import constants
from cpbert.machinery import metrics
from cpbert.machinery.metrics import MetricsLog
from cpbert.machinery.tasks import TaskError, piece_examples, notes_to_tatum_predictions
from cpbert.model.heads import FinetuneModel, seeded
from cpbert.processing.batching import pad_ids
from cpbert.processing.optimizer import StableAdamW, DivergenceError

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
ENCODER_PREFIX = "encoder."


def encoder_state(tensors):
    """Encoder weights out of a pre-training checkpoint; G and optimizer moments are dropped."""
    state = {name[len(ENCODER_PREFIX):]: torch.from_numpy(np.asarray(t))
             for name, t in tensors.items() if name.startswith(ENCODER_PREFIX)}
    if not state:
        raise TaskError("checkpoint holds no encoder weights")
    return state


class Finetuner(object):
    def __init__(self, task, pieces, split, model_config, optimizer_config, schedule, seed,
            encoder_tensors=None, log=None):
        self.task = task
        self.pieces = pieces
        self.split = split
        self.model_config = model_config
        self.optimizer_config = optimizer_config
        self.schedule = schedule
        self.seed = seed
        self.encoder_tensors = encoder_tensors
        self.log = log if log is not None else MetricsLog()
        self.step = 0
        self.best_value = -1.0
        self.best_step = -1
        self.best_state = None
        self.best_report = None
        self.setUp()

    def setUp(self):
        if self.task.level not in (constants.NOTE_LEVEL, constants.SEQUENCE_LEVEL):
            raise TaskError("Unknown task level: %s" % self.task.level)
        if self.schedule.max_len > self.model_config.max_len:
            raise TaskError("segment length %d exceeds model max_len %d"
                % (self.schedule.max_len, self.model_config.max_len))
        self.examples = {}
        for name in (constants.TRAIN_SPLIT, constants.VALID_SPLIT, constants.TEST_SPLIT):
            examples = []
            for piece_id in self.split.get(name, []):
                if piece_id not in self.pieces:
                    raise TaskError("split %s names unknown piece %s" % (name, piece_id))
                examples.extend(piece_examples(self.pieces[piece_id], self.schedule.max_len))
            self.examples[name] = examples
        if self.schedule.steps and not self.examples[constants.TRAIN_SPLIT]:
            raise TaskError("empty training split")
        if not self.examples[constants.VALID_SPLIT] and self.examples[constants.TRAIN_SPLIT]:
            logger.warning("Empty validation split; selecting on the training split")
            self.examples[constants.VALID_SPLIT] = self.examples[constants.TRAIN_SPLIT]

        self.vocab = self.model_config.vocab
        self.model = seeded(FinetuneModel, self.seed, self.model_config,
            self.task.level, self.task.n_classes)
        if self.encoder_tensors is not None:
            self.model.encoder.load_state_dict(encoder_state(self.encoder_tensors))
            logger.info("Initialised encoder from pre-trained weights")
        self.optimizer = StableAdamW(self.model.parameters(), self.optimizer_config)

    def load_model_state(self, tensors):
        """Restore a fine-tuned encoder and head."""
        self.model.load_state_dict({name: torch.from_numpy(np.asarray(t))
            for name, t in tensors.items()})

    def _inputs(self, examples):
        return pad_ids([e.segment.ids(self.vocab) for e in examples], self.vocab)

    def _labels(self, examples, length):
        if self.task.level == constants.SEQUENCE_LEVEL:
            return torch.tensor([e.labels[0] for e in examples], dtype=torch.int64)
        out = torch.full((len(examples), length), IGNORE_INDEX, dtype=torch.int64)
        for i, e in enumerate(examples):
            out[i, :len(e.labels)] = torch.tensor(e.labels, dtype=torch.int64)
        return out

    def loss(self, examples):
        ids = self._inputs(examples)
        logits, _ = self.model(ids)
        labels = self._labels(examples, ids.shape[1])
        if self.task.level == constants.SEQUENCE_LEVEL:
            return F.cross_entropy(logits, labels)
        return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1),
            ignore_index=IGNORE_INDEX)

    @torch.no_grad()
    def predict(self, examples):
        """Per example: a tuple of note predictions, or a one-element tuple."""
        self.model.eval()
        out = []
        size = self.schedule.eval_batch_size
        for start in range(0, len(examples), size):
            chunk = examples[start:start + size]
            logits, _ = self.model(self._inputs(chunk))
            pred = logits.argmax(dim=-1)
            for i, e in enumerate(chunk):
                if self.task.level == constants.SEQUENCE_LEVEL:
                    out.append((int(pred[i]),))
                else:
                    out.append(tuple(int(v) for v in pred[i, :len(e.labels)]))
        return out

    def evaluate(self, name):
        examples = self.examples[name]
        if not examples:
            return None
        predictions = self.predict(examples)
        if self.task.level == constants.SEQUENCE_LEVEL:
            return metrics.compute(self.task.metric,
                [p[0] for p in predictions], [e.labels[0] for e in examples])

        by_piece = {}
        for e, p in zip(examples, predictions):
            by_piece.setdefault(e.piece_id, []).append((e.segment.ordinal, p))
        pred_all, gt_all = [], []
        for piece_id in sorted(by_piece):
            piece = self.pieces[piece_id]
            notes = [v for _, p in sorted(by_piece[piece_id]) for v in p]
            if self.task.metric == constants.CSR_METRIC:
                if piece.tatum_labels is None:
                    raise TaskError("piece %s has no tatum labels for CSR" % piece_id)
                pred_all.extend(notes_to_tatum_predictions(notes, piece.score,
                    len(piece.tatum_labels)))
                gt_all.extend(piece.tatum_labels)
            else:
                pred_all.extend(notes)
                gt_all.extend(piece.note_labels)
        return metrics.compute(self.task.metric, pred_all, gt_all)

    def _consider(self):
        report = self.evaluate(constants.VALID_SPLIT)
        self.log.add(self.step, constants.VALID_SPLIT, report.metric, report.value)
        logger.info("step %d: valid %s %.4f", self.step, report.metric, report.value)
        if report.value > self.best_value:
            self.best_value = report.value
            self.best_step = self.step
            self.best_report = report
            self.best_state = {k: t.detach().clone() for k, t in self.model.state_dict().items()}

    def _batches(self):
        train = self.examples[constants.TRAIN_SPLIT]
        size = min(self.schedule.batch_size, len(train))
        order, cursor, epoch = None, 0, 0
        for _ in range(self.schedule.steps):
            if order is None or cursor + size > len(train):
                epoch = 0 if order is None else epoch + 1
                order = np.random.default_rng(
                    utils.derive_seed(self.seed, 241, epoch)).permutation(len(train))
                cursor = 0
            yield [train[int(i)] for i in order[cursor:cursor + size]]
            cursor += size

    def train(self):
        """Joint training of encoder and head; returns the result summary."""
        torch.manual_seed(utils.derive_seed(self.seed, 11) & 0x7FFFFFFFFFFFFFFF)
        self._consider()
        streak = 0
        for examples in self._batches():
            self.model.train()
            loss = self.loss(examples)
            value = float(loss.detach())
            if not np.isfinite(value):
                streak += 1
                if streak >= 2:
                    raise DivergenceError("non-finite loss twice in a row at step %d" % self.step)
                logger.warning("Non-finite loss at step %d; skipping update", self.step)
            else:
                streak = 0
                self.optimizer.zero_grad(set_to_none=True)
                loss.backward()
                self.optimizer.step()
            self.step += 1
            self.log.add(self.step, constants.TRAIN_SPLIT, "loss", value)
            if self.step % self.schedule.eval_interval == 0 or self.step == self.schedule.steps:
                self._consider()

        self.model.load_state_dict(self.best_state)
        test = self.evaluate(constants.TEST_SPLIT)
        if test is not None:
            self.log.add(self.best_step, constants.TEST_SPLIT, test.metric, test.value)
            logger.info("test %s %.4f (best step %d)", test.metric, test.value, self.best_step)
        return {
            "task": self.task.name,
            "best_step": self.best_step,
            constants.VALID_SPLIT: self.best_report,
            constants.TEST_SPLIT: test,
        }


def finetune(task, pieces, split, model_config, optimizer_config, schedule, seed,
        encoder_tensors=None, log=None):
    trainer = Finetuner(task, pieces, split, model_config, optimizer_config, schedule, seed,
        encoder_tensors, log)
    return trainer.model, trainer.train()
