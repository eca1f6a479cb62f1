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

import numpy as np
import torch

from base import TestBase

from cpbert.utils import constants
from cpbert.machinery.corruption import CorruptionConfig
from cpbert.model.heads import HeadOutputs, PretrainModel, seeded
from cpbert.processing.batching import corrupt_batch, collate
from cpbert.processing.losses import token_loss, pianoroll_loss, pretrain_loss, \
    reconstruction_accuracy

SIZES = (2, 16, 86, 64)


class TokenLossTest(TestBase):
    def test_uniform_logits(self):
        logits = {a: torch.zeros(1, 4, k, dtype=torch.float64)
            for a, k in zip(constants.ATTRIBUTES, SIZES)}
        clean = torch.tensor([[[0, 3, 40, 7]] * 4])
        corrupted = torch.tensor([[True, False, True, True]])
        loss, n = token_loss(logits, clean, corrupted)
        self.assertEqual(n, 3)
        self.assertAlmostEqual(float(loss), sum(math.log(k) for k in SIZES), places=12)

    def test_scalar_oracle(self):
        rng = self.rng(80)
        logits = {a: torch.tensor(rng.normal(size=(2, 3, k))) for a, k in
            zip(constants.ATTRIBUTES, SIZES)}
        clean = torch.tensor(np.stack([rng.integers(0, k, size=(2, 3)) for k in SIZES], -1))
        corrupted = torch.tensor([[True, False, True], [False, False, True]])
        loss, _ = token_loss(logits, clean, corrupted)

        expected = 0.0
        for b, i in ((0, 0), (0, 2), (1, 2)):
            for j, a in enumerate(constants.ATTRIBUTES):
                row = logits[a][b, i].numpy()
                log_z = math.log(sum(math.exp(v) for v in row))
                expected -= row[int(clean[b, i, j])] - log_z
        self.assertAlmostEqual(float(loss), expected / 3, places=10)

    def test_empty_corruption_set(self):
        logits = {a: torch.zeros(1, 2, k) for a, k in zip(constants.ATTRIBUTES, SIZES)}
        with self.assertLogs("cpbert.processing.losses", level="WARNING"):
            loss, n = token_loss(logits, torch.zeros(1, 2, 4, dtype=torch.long),
                torch.zeros(1, 2, dtype=torch.bool))
        self.assertEqual((float(loss), n), (0.0, 0))


class PianorollLossTest(TestBase):
    def test_zero_prediction(self):
        pr = torch.zeros(1, 2, 16, 86)
        cm = torch.zeros(1, 2, 16, 12)
        pr[0, 0, 3, 10] = 1
        cm[0, 0, 3, 8] = 1
        pos = torch.tensor([[3, 0]])
        pad = torch.tensor([[False, False]])
        loss = pianoroll_loss(torch.zeros_like(pr), torch.zeros_like(cm), pr, cm, pos, pad)
        note0 = 1 / (16 * 86) + 1 / (16 * 12) + 1 / 86 + 1 / 12
        self.assertAlmostEqual(float(loss), note0 / 2, places=6)

    def test_padding_excluded(self):
        pr = torch.ones(1, 2, 16, 86)
        cm = torch.ones(1, 2, 16, 12)
        pos = torch.zeros(1, 2, dtype=torch.long)
        pad = torch.tensor([[False, True]])
        loss = pianoroll_loss(torch.zeros_like(pr), torch.zeros_like(cm), pr, cm, pos, pad)
        self.assertAlmostEqual(float(loss), 4.0, places=6)


class PretrainLossTest(TestBase):
    def batch(self, seed=81):
        rng = self.rng(seed)
        segments = [self.random_segment(rng, n=14, ordinal=i) for i in range(2)]
        segments.append(self.random_segment(rng, n=9, ordinal=2))
        return corrupt_batch(segments, [0, 1, 2], CorruptionConfig(), 1)

    def test_components(self):
        model = seeded(PretrainModel, 0, self.tiny_config()).double()
        batch = self.batch()
        total, parts = pretrain_loss(model(batch.ids), batch)
        self.assertAlmostEqual(parts["loss"], parts["token_loss"] + parts["pianoroll_loss"])
        self.assertEqual(parts["n_corrupted"], 4 + 4 + 2)
        self.assertTrue(total.requires_grad)

    def test_gradients_match_finite_differences(self):
        model = seeded(PretrainModel, 1, self.tiny_config()).double()
        model.eval()
        batch = self.batch(82)
        loss, _ = pretrain_loss(model(batch.ids), batch)
        loss.backward()

        params = [p for p in model.parameters()]
        sizes = [p.numel() for p in params]
        offsets = np.cumsum([0] + sizes)
        rng = self.rng(83)
        picks = rng.choice(offsets[-1], size=1000, replace=False)
        h = 1e-5
        worst = 0.0
        with torch.no_grad():
            for flat in picks:
                k = int(np.searchsorted(offsets, flat, side="right") - 1)
                p, i = params[k].view(-1), int(flat - offsets[k])
                analytic = float(params[k].grad.view(-1)[i])
                original = float(p[i])
                p[i] = original + h
                up = float(pretrain_loss(model(batch.ids), batch)[0])
                p[i] = original - h
                down = float(pretrain_loss(model(batch.ids), batch)[0])
                p[i] = original
                numeric = (up - down) / (2 * h)
                scale = max(abs(analytic), abs(numeric), 1e-4)
                worst = max(worst, abs(analytic - numeric) / scale)
        self.assertLess(worst, 1e-4)

    def test_perfect_reconstruction(self):
        segments = [self.random_segment(self.rng(84), n=10)]
        batch = collate(segments, records=None)
        batch.corrupted[0, :5] = True
        logits = {}
        for j, (a, k) in enumerate(zip(constants.ATTRIBUTES, SIZES)):
            logits[a] = torch.nn.functional.one_hot(batch.clean_ids[..., j], k + 2)[..., :k].double()
        outputs = HeadOutputs(logits, None, None, None, batch.pad_mask)
        self.assertEqual(reconstruction_accuracy(outputs, batch),
            {"token": 1.0, "b": 1.0, "pos": 1.0, "pit": 1.0, "dur": 1.0})
