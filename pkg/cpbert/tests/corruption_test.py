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
from collections import Counter

import numpy as np

from base import TestBase

from cpbert.utils import constants
from cpbert.machinery.tokens import CPToken, Segment, DEFAULT_VOCAB
from cpbert.machinery.corruption import CorruptionConfig, CorruptionError, n_corrupted, \
    sample_corruption_set, perturb_attribute, corrupt_rc, corrupt_mlm, corrupt_segment, \
    segment_rng

RC_RANGES = {"pos": 4, "pit": 12, "dur": 12}


class CorruptionSetTest(TestBase):
    def test_count(self):
        config = CorruptionConfig()
        rng = self.rng(11)
        for n in (1, 3, 4, 10, 33, 1024):
            indices = sample_corruption_set(n, config, rng)
            self.assertEqual(len(indices), n * 3 // 10)
            self.assertEqual(len(set(indices)), len(indices))
            self.assertTrue(all(0 <= i < n for i in indices))

    def test_decimal_ratio(self):
        self.assertEqual(n_corrupted(10, 0.3), 3)
        self.assertEqual(n_corrupted(20, 0.15), 3)
        self.assertEqual(n_corrupted(3, 0.3), 0)

    def test_empty_segment(self):
        with self.assertRaises(CorruptionError):
            sample_corruption_set(0, CorruptionConfig(), self.rng())

    def test_invalid_config(self):
        with self.assertRaises(CorruptionError):
            CorruptionConfig(ratio=1.5)
        with self.assertRaises(CorruptionError):
            CorruptionConfig(mode="shuffle")
        with self.assertRaises(CorruptionError):
            CorruptionConfig(r_pit=-1)


class PerturbTest(TestBase):
    def test_half_open_interval(self):
        rng = self.rng(12)
        drawn = {perturb_attribute(rng, 60, "pit", 2) for _ in range(500)}
        self.assertEqual(drawn, {58, 59, 60, 61})

    def test_inclusive_upper(self):
        rng = self.rng(13)
        drawn = {perturb_attribute(rng, 60, "pit", 2, inclusive_upper=True) for _ in range(500)}
        self.assertEqual(drawn, {58, 59, 60, 61, 62})

    def test_empty_interval_keeps_value(self):
        rng = self.rng(14)
        self.assertEqual(perturb_attribute(rng, 60, "pit", 0), 60)

    def test_domain_edges(self):
        rng = self.rng(15)
        drawn = {perturb_attribute(rng, 22, "pit", 12) for _ in range(500)}
        self.assertEqual(min(drawn), 22)
        self.assertLess(max(drawn), 34)

    def test_unbounded(self):
        rng = self.rng(16)
        drawn = {perturb_attribute(rng, 8, "pos", None) for _ in range(2000)}
        self.assertEqual(drawn, set(range(16)))


class CorruptRCTest(TestBase):
    def test_bounds(self):
        rng = self.rng(17)
        config = CorruptionConfig()
        n_checked = 0
        for ordinal in range(300):
            seg = self.random_segment(rng, n=60, ordinal=ordinal)
            out, record = corrupt_segment(seg, config, segment_rng(0, ordinal))
            self.assertEqual(len(record.corrupted_indices), 18)
            self.assertEqual(out.clean_tokens, seg.tokens)
            for i in range(len(seg)):
                old, new = seg.tokens[i], out.tokens[i]
                if i not in record.corrupted_indices:
                    self.assertEqual(old, new)
                    continue
                self.assertIn(new.b, (0, 1))
                for attr, r in RC_RANGES.items():
                    a, b = getattr(old, attr), getattr(new, attr)
                    self.assertLessEqual(abs(a - b), r)
                    self.assertTrue(constants.ATTR_LOW[attr] <= b <= constants.ATTR_HIGH[attr])
                    n_checked += 1
        self.assertGreater(n_checked, 10000)

    def test_record_keeps_originals(self):
        seg = self.random_segment(self.rng(18), n=20)
        out, record = corrupt_rc(seg, (1, 5), CorruptionConfig(), self.rng(19))
        self.assertEqual(record.originals, (seg.tokens[1], seg.tokens[5]))
        self.assertEqual(record.mode, constants.RC_MODE)

    def test_rc_inf_covers_domain(self):
        seg = Segment((CPToken(1, 0, 22, 1),) * 10, (0,) * 10)
        config = CorruptionConfig(mode=constants.RC_INF_MODE)
        rng = self.rng(20)
        seen = set()
        for _ in range(200):
            out, _ = corrupt_rc(seg, tuple(range(10)), config, rng)
            seen.update(t.pit for t in out.tokens)
        self.assertEqual(seen, set(range(22, 108)))

    def test_audit(self):
        audit = []
        seg = self.random_segment(self.rng(21), n=30, piece_id="x", ordinal=2)
        out, _ = corrupt_segment(seg, CorruptionConfig(), self.rng(22), audit)
        changed = sum(1 for a, b in zip(seg.tokens, out.tokens)
            for u, v in zip(a, b) if u != v)
        self.assertEqual(len(audit), changed)
        self.assertTrue(all(e["segment"] == "x#2" for e in audit))

    def test_bad_index(self):
        seg = self.random_segment(self.rng(), n=5)
        with self.assertRaises(CorruptionError):
            corrupt_rc(seg, (7,), CorruptionConfig(), self.rng())

    def test_wrong_mode(self):
        seg = self.random_segment(self.rng(), n=5)
        with self.assertRaises(CorruptionError):
            corrupt_rc(seg, (1,), CorruptionConfig(mode=constants.MLM_MODE), self.rng())
        with self.assertRaises(CorruptionError):
            corrupt_mlm(seg, (1,), self.rng(), CorruptionConfig())


class CorruptMLMTest(TestBase):
    def test_proportions(self):
        rng = self.rng(23)
        config = CorruptionConfig(mode=constants.MLM_MODE)
        mask = DEFAULT_VOCAB.mask_token()
        counts = Counter()
        # all-distinct tokens make "kept" unambiguous except for random draws hitting the original
        seg = Segment(tuple(CPToken(1, i % 16, 22 + i % 86, 1 + i % 64) for i in range(1000)),
            tuple(range(1000)))
        indices = tuple(range(1000))
        for _ in range(100):
            out, _ = corrupt_mlm(seg, indices, rng, config)
            for old, new in zip(seg.tokens, out.tokens):
                if new == mask:
                    counts["mask"] += 1
                elif new == old:
                    counts["keep"] += 1
                else:
                    counts["random"] += 1
        total = sum(counts.values())
        self.assertAlmostEqual(counts["mask"] / total, 0.8, delta=0.01)
        self.assertAlmostEqual(counts["random"] / total, 0.1, delta=0.01)
        self.assertAlmostEqual(counts["keep"] / total, 0.1, delta=0.01)

    def test_mask_ids(self):
        seg = self.random_segment(self.rng(24), n=10)
        config = CorruptionConfig(mode=constants.MLM_MODE, mask_prob=1.0, random_prob=0.0)
        out, _ = corrupt_mlm(seg, (0, 3), self.rng(), config)
        ids = out.ids()
        self.assertEqual(ids[0].tolist(), [2, 16, 86, 64])
        self.assertEqual(ids[3].tolist(), [2, 16, 86, 64])


class SegmentRngTest(TestBase):
    def test_deterministic(self):
        a = segment_rng(5, 7, 1).integers(0, 1 << 30, size=8)
        b = segment_rng(5, 7, 1).integers(0, 1 << 30, size=8)
        c = segment_rng(5, 7, 2).integers(0, 1 << 30, size=8)
        self.assertTrue(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))
