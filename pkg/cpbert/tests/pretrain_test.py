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

import torch
from mock import patch

from base import TestBase, slow

from cpbert.utils import constants
from cpbert.machinery.tokens import tokenize
from cpbert.machinery.corruption import CorruptionConfig
from cpbert.machinery.checkpoint import encode_checkpoint
from cpbert.model.heads import PretrainModel, seeded
from cpbert.processing.optimizer import OptimizerConfig, DivergenceError, TrainingError
from cpbert.processing.pretrain import Pretrainer, ScheduleConfig, split_pieces


class PretrainTest(TestBase):
    def corpus(self, n=8, seed=100, n_notes=20):
        rng = self.rng(seed)
        return [("piece%02d" % i, tokenize(self.grid_score(rng, n_notes=n_notes)))
            for i in range(n)]

    def schedule(self, **kwargs):
        values = dict(steps=6, batch_size=2, eval_interval=3, eval_batch_size=4, max_len=16)
        values.update(kwargs)
        return ScheduleConfig(**values)

    def trainer(self, config=None, optimizer=None, schedule=None, corruption=None, seed=0):
        return Pretrainer(self.corpus(), config or self.tiny_config(),
            optimizer or OptimizerConfig(lr=1e-3), corruption or CorruptionConfig(),
            schedule or self.schedule(), seed)

    def test_split_pieces(self):
        ids = ["p%d" % i for i in range(100)]
        train, valid = split_pieces(ids, 0.15, 3)
        self.assertEqual((len(train), len(valid)), (85, 15))
        self.assertEqual(set(train) | set(valid), set(ids))
        self.assertFalse(set(train) & set(valid))
        self.assertEqual(split_pieces(ids, 0.15, 3), (train, valid))
        self.assertNotEqual(split_pieces(ids, 0.15, 4), (train, valid))

    def test_singleton_corpus(self):
        with self.assertLogs("cpbert.processing.pretrain", level="WARNING"):
            trainer = Pretrainer(self.corpus(n=1), self.tiny_config(), OptimizerConfig(),
                CorruptionConfig(), self.schedule(steps=1), 0)
        self.assertEqual(trainer.valid_segments, trainer.train_segments)

    def test_zero_lr_keeps_parameters(self):
        trainer = self.trainer(optimizer=OptimizerConfig(lr=0.0))
        tensors, _, meta = trainer.train()
        initial = seeded(PretrainModel, 0, self.tiny_config()).state_dict()
        for name, value in initial.items():
            self.assertTrue(torch.equal(tensors[name], value), name)
        self.assertEqual(meta["step"], 0)

    def test_reproducible(self):
        a, b = self.trainer(), self.trainer()
        first, second = a.train(), b.train()
        self.assertEqual(encode_checkpoint(*first), encode_checkpoint(*second))
        self.assertEqual(a.log.get(), b.log.get())

    def test_prefetch_matches_inline(self):
        a = self.trainer(schedule=self.schedule(prefetch=0))
        b = self.trainer(schedule=self.schedule(prefetch=2))
        self.assertEqual(encode_checkpoint(*a.train()), encode_checkpoint(*b.train()))

    def test_evaluation_steps(self):
        trainer = self.trainer(schedule=self.schedule(steps=7))
        trainer.train()
        steps = [s for s, _ in trainer.log.series(constants.VALID_SPLIT, "accuracy")]
        self.assertEqual(steps, [0, 3, 6, 7])
        self.assertEqual(len(trainer.log.series(constants.TRAIN_SPLIT, "loss")), 7)

    def test_best_snapshot_selection(self):
        trainer = self.trainer()
        values = iter([0.2, 0.5, 0.5])

        def fake_evaluate():
            metrics = {"accuracy": next(values), "loss": 1.0, "token_loss": 1.0,
                       "pianoroll_loss": 0.0}
            return metrics

        with patch.object(trainer, "evaluate", side_effect=fake_evaluate):
            _, _, meta = trainer.train()
        self.assertEqual(meta["step"], 3)
        self.assertEqual(meta["best_valid_accuracy"], 0.5)

    def test_divergence(self):
        trainer = self.trainer()
        nan = torch.tensor(float("nan"), requires_grad=True)

        def fake_loss(outputs, batch):
            return nan, {"loss": math.nan, "token_loss": math.nan, "pianoroll_loss": 0.0,
                         "n_corrupted": 1}

        with patch("cpbert.processing.pretrain.pretrain_loss", side_effect=fake_loss):
            with self.assertRaises(DivergenceError):
                trainer.train()
        self.assertEqual(trainer.state.step, 1)

    def test_without_pianoroll(self):
        trainer = self.trainer(config=self.tiny_config(pianoroll=False))
        tensors, config, _ = trainer.train()
        self.assertFalse(any(k.startswith("pianoroll_head") for k in tensors))
        self.assertFalse(config["pianoroll"])

    def test_checkpoint_contents(self):
        tensors, config, meta = self.trainer().train()
        self.assertIn("optim/encoder.embedding.proj.weight/exp_avg", tensors)
        self.assertEqual(config["d_model"], 16)
        self.assertEqual(meta["kind"], "pretrain")
        self.assertEqual(set(meta["best_valid_metrics"]), {"accuracy", "accuracy_b",
            "accuracy_pos", "accuracy_pit", "accuracy_dur", "loss", "token_loss",
            "pianoroll_loss"})

    def test_length_check(self):
        with self.assertRaises(TrainingError):
            self.trainer(schedule=self.schedule(max_len=128))

    def test_schedule_validation(self):
        with self.assertRaises(TrainingError):
            ScheduleConfig(batch_size=0)
        with self.assertRaises(TrainingError):
            ScheduleConfig(valid_fraction=1.0)


class ToyPretrainTest(TestBase):
    """Learning criteria on a seeded synthetic corpus."""

    def corpus(self):
        rng = self.rng(101)
        return [("toy%03d" % i, tokenize(self.grid_score(rng,
            n_notes=int(rng.integers(64, 257)), n_bars=16))) for i in range(200)]

    def run_mode(self, mode):
        config = self.tiny_config(d_model=64, n_heads=4, ffn_dim=96,
            emb_dims=(32, 32, 32, 32), max_len=256)
        schedule = ScheduleConfig(steps=2000, batch_size=12, eval_interval=250,
            eval_batch_size=32, max_len=256)
        trainer = Pretrainer(self.corpus(), config, OptimizerConfig(lr=1e-3),
            CorruptionConfig(mode=mode), schedule, 0)
        trainer.train()
        return trainer

    @slow
    def test_rc_learns(self):
        trainer = self.run_mode(constants.RC_MODE)
        losses = trainer.log.series(constants.VALID_SPLIT, "token_loss")
        self.assertLessEqual(min(v for _, v in losses[1:]), 0.7 * losses[0][1])
        best = trainer.best["metrics"]
        self.assertGreater(best["accuracy_pit"], 2 / 25)

    @slow
    def test_mlm_beats_chance(self):
        trainer = self.run_mode(constants.MLM_MODE)
        self.assertGreater(trainer.best["metrics"]["accuracy_pit"], 1 / 86)
