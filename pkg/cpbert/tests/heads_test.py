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
import torch

from base import TestBase

from cpbert.utils import constants
from cpbert.model.encoder import EncoderError, segment_tensor
from cpbert.model.heads import TokenHead, PianorollHead, SequenceHead, NoteHead, \
    PretrainModel, FinetuneModel, local_rows, seeded


class HeadsTest(TestBase):
    def test_token_head_split(self):
        head = TokenHead(self.tiny_config())
        logits = head(torch.randn(2, 5, 16))
        self.assertEqual([logits[a].shape[-1] for a in constants.ATTRIBUTES], [2, 16, 86, 64])

    def test_pianoroll_head_shapes(self):
        pr, cm = PianorollHead(self.tiny_config())(torch.randn(2, 5, 16))
        self.assertEqual(tuple(pr.shape), (2, 5, 16, 86))
        self.assertEqual(tuple(cm.shape), (2, 5, 16, 12))

    def test_local_rows(self):
        bars = torch.arange(2 * 16 * 3, dtype=torch.float64).view(2, 16, 3)
        rows = local_rows(bars, torch.tensor([0, 15]))
        self.assertEqual(rows.tolist(), [[0, 1, 2], [93, 94, 95]])

    def test_note_head(self):
        logits = NoteHead(16, 7)(torch.randn(3, 4, 16))
        self.assertEqual(tuple(logits.shape), (3, 4, 7))

    def test_pooling_of_identical_notes(self):
        head = SequenceHead(16, 3).double()
        row = torch.randn(16, dtype=torch.float64)
        hidden = row.expand(2, 6, 16).clone()
        pooled, weights = head.pool(hidden, torch.zeros(2, 6, dtype=torch.bool))
        self.assertTrue(torch.allclose(pooled, row.expand(2, 16)))
        self.assertTrue(torch.allclose(weights, torch.full((2, 6), 1 / 6, dtype=torch.float64)))

    def test_pooling_ignores_padding(self):
        head = SequenceHead(16, 3).double()
        hidden = torch.randn(1, 5, 16, dtype=torch.float64)
        mask = torch.tensor([[False, False, False, True, True]])
        pooled, weights = head.pool(hidden, mask)
        self.assertEqual(weights[0, 3:].tolist(), [0.0, 0.0])
        altered = hidden.clone()
        altered[0, 3:] = 100.0
        self.assertTrue(torch.allclose(head.pool(altered, mask)[0], pooled))
        self.assertAlmostEqual(float(weights.sum()), 1.0, places=12)

    def test_all_padding(self):
        head = SequenceHead(16, 3)
        with self.assertRaises(EncoderError):
            head(torch.randn(1, 3, 16), torch.ones(1, 3, dtype=torch.bool))

    def test_pretrain_model(self):
        seg = self.random_segment(self.rng(70), n=8)
        outputs = seeded(PretrainModel, 0, self.tiny_config())(segment_tensor(seg))
        self.assertEqual(tuple(outputs.hidden.shape), (1, 8, 16))
        self.assertEqual(tuple(outputs.pianoroll.shape), (1, 8, 16, 86))

        plain = seeded(PretrainModel, 0, self.tiny_config(pianoroll=False))
        self.assertIsNone(plain.pianoroll_head)
        self.assertIsNone(plain(segment_tensor(seg)).pianoroll)

    def test_finetune_model(self):
        ids = segment_tensor(self.random_segment(self.rng(71), n=8))
        logits, _ = FinetuneModel(self.tiny_config(), constants.SEQUENCE_LEVEL, 5)(ids)
        self.assertEqual(tuple(logits.shape), (1, 5))
        logits, _ = FinetuneModel(self.tiny_config(), constants.NOTE_LEVEL, 3)(ids)
        self.assertEqual(tuple(logits.shape), (1, 8, 3))
        with self.assertRaises(EncoderError):
            FinetuneModel(self.tiny_config(), constants.TATUM_LEVEL, 3)


class HeadGradientTest(TestBase):
    def inputs(self, seed):
        g = torch.Generator().manual_seed(seed)
        hidden = torch.randn(2, 5, 8, generator=g, dtype=torch.float64)
        pad_mask = torch.tensor([[False] * 5, [False, False, False, True, True]])
        return hidden, pad_mask

    def worst_error(self, head, loss_fn, hidden):
        hidden = hidden.clone().requires_grad_(True)
        head.zero_grad()
        loss_fn(hidden).backward()
        tensors = [(p, p.grad) for p in head.parameters()] + [(hidden, hidden.grad)]
        h = 1e-5
        worst = 0.0
        with torch.no_grad():
            for tensor, grad in tensors:
                flat, flat_grad = tensor.view(-1), grad.view(-1)
                for i in range(flat.numel()):
                    original = float(flat[i])
                    flat[i] = original + h
                    up = float(loss_fn(hidden))
                    flat[i] = original - h
                    down = float(loss_fn(hidden))
                    flat[i] = original
                    numeric = (up - down) / (2 * h)
                    analytic = float(flat_grad[i])
                    scale = max(abs(analytic), abs(numeric), 1e-4)
                    worst = max(worst, abs(analytic - numeric) / scale)
        return worst

    def test_note_head(self):
        head = seeded(NoteHead, 5, 8, 3).double()
        hidden, _ = self.inputs(6)
        labels = torch.tensor([[0, 1, 2, 1, 0], [2, 2, 1, 0, 1]])

        def loss_fn(x):
            return torch.nn.functional.cross_entropy(head(x).reshape(-1, 3), labels.reshape(-1))

        self.assertLess(self.worst_error(head, loss_fn, hidden), 1e-4)

    def test_sequence_head_with_attention_pooling(self):
        head = seeded(SequenceHead, 7, 8, 3).double()
        hidden, pad_mask = self.inputs(8)
        labels = torch.tensor([2, 0])

        def loss_fn(x):
            return torch.nn.functional.cross_entropy(head(x, pad_mask), labels)

        self.assertLess(self.worst_error(head, loss_fn, hidden), 1e-4)
        self.assertTrue(head.score_w.weight.grad.abs().sum() > 0)
        self.assertTrue(head.score_u.weight.grad.abs().sum() > 0)
