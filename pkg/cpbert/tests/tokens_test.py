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
from fractions import Fraction

from base import TestBase

from cpbert.utils import constants
from cpbert.machinery.scores import Note, Score, validate_score
from cpbert.machinery.tokens import CPToken, Segment, VocabSpec, DEFAULT_VOCAB, \
    TokenizerError, rescale_bars, tokenize, segment, detokenize, check_bar_flags, \
    score_to_segments, score_tokens


def quantize_oracle(score):
    """Straight-line quantizer written against the token definitions."""
    out = []
    previous = None
    for note in score.notes:
        bar = 0
        for i, d in enumerate(score.downbeats):
            if d <= note.onset:
                bar = i
        pos = math.floor(4 * (note.onset - score.downbeats[bar]) + Fraction(1, 2))
        pos = min(max(pos, 0), 15)
        dur = math.floor(8 * note.duration + Fraction(1, 2))
        dur = min(max(dur, 1), 64)
        pit = note.pitch
        while pit < 22:
            pit += 12
        while pit > 107:
            pit -= 12
        out.append((CPToken(int(bar != previous), pos, pit, dur), bar))
        previous = bar
    return out


class RescaleBarsTest(TestBase):
    def test_four_four_identity(self):
        score = self.free_score(self.rng(2))
        self.assertEqual(rescale_bars(score), score)

    def test_three_four_bar(self):
        score = validate_score(Score(
            (Note(Fraction(3, 2), Fraction(3, 4), 60),),
            (Fraction(0), Fraction(3), Fraction(6))))
        out = rescale_bars(score)
        self.assertEqual(out.notes[0].onset, 2)
        self.assertEqual(out.notes[0].duration, 1)
        self.assertEqual(out.downbeats, (0, 4, 8))

    def test_mixed_meters_against_affine_oracle(self):
        rng = self.rng(3)
        downbeats = (Fraction(0), Fraction(3), Fraction(7), Fraction(10))
        lengths = [Fraction(3), Fraction(4), Fraction(3), Fraction(3)]
        notes = []
        for _ in range(200):
            onset = Fraction(int(rng.integers(0, 13 * 48)), 48)
            notes.append(Note(onset, Fraction(int(rng.integers(1, 96)), 48),
                int(rng.integers(0, 128))))
        score = validate_score(Score(tuple(notes), downbeats))

        out = rescale_bars(score)
        for original, mapped in zip(score.notes, out.notes):
            m = max(i for i, d in enumerate(downbeats) if d <= original.onset)
            factor = Fraction(4) / lengths[m]
            self.assertEqual(mapped.onset, 4 * m + (original.onset - downbeats[m]) * factor)
            self.assertEqual(mapped.duration, original.duration * factor)
            self.assertEqual(mapped.pitch, original.pitch)

    def test_notes_past_last_downbeat(self):
        score = validate_score(Score(
            (Note(Fraction(0), Fraction(1), 60), Note(Fraction(9), Fraction(1), 62),
             Note(Fraction(13), Fraction(1), 64)),
            (Fraction(0), Fraction(4))))
        out = rescale_bars(score)
        self.assertEqual([n.onset for n in out.notes], [0, 9, 13])
        self.assertEqual(out.downbeats, (0, 4, 8, 12))

    def test_open_bar_repeats_final_meter(self):
        score = validate_score(Score(
            (Note(Fraction(7), Fraction(3, 4), 60),), (Fraction(0), Fraction(3))))
        out = rescale_bars(score)
        self.assertEqual(out.notes[0].onset, Fraction(28, 3))
        self.assertEqual(out.notes[0].duration, 1)
        self.assertEqual(out.downbeats, (0, 4, 8))

    def test_empty_downbeats(self):
        with self.assertRaises(TokenizerError):
            rescale_bars(Score())


class TokenizeTest(TestBase):
    def test_grid_examples(self):
        score = validate_score(Score(
            (Note(Fraction(0), Fraction(1), 60), Note(Fraction(5), Fraction(8), 107)),
            (Fraction(0), Fraction(4))))
        self.assertEqual(tokenize(score), [(CPToken(1, 0, 60, 8), 0), (CPToken(1, 4, 107, 64), 1)])

    def test_matches_straight_line_oracle(self):
        score = self.free_score(self.rng(4), n_notes=500, n_bars=30)
        self.assertEqual(tokenize(score), quantize_oracle(score))

    def test_octave_shift(self):
        score = validate_score(Score(
            (Note(Fraction(0), Fraction(1), 10), Note(Fraction(0), Fraction(1), 127)),
            (Fraction(0),)))
        self.assertEqual([t.pit for t, _ in tokenize(score)], [22, 103])

    def test_clamping(self):
        score = validate_score(Score(
            (Note(Fraction(63, 16), Fraction(1, 32), 60), Note(Fraction(1), Fraction(20), 60)),
            (Fraction(0),)))
        tokens = [t for t, _ in tokenize(score)]
        self.assertEqual(tokens[1].pos, 15)
        self.assertEqual(tokens[1].dur, 1)
        self.assertEqual(tokens[0].dur, 64)

    def test_bar_flags(self):
        tokens = tokenize(self.free_score(self.rng(5), n_notes=300))
        check_bar_flags(tokens)
        bars = {}
        for token, m in tokens:
            bars.setdefault(m, []).append(token.b)
        for flags in bars.values():
            self.assertEqual(flags[0], 1)
            self.assertEqual(sum(flags), 1)

    def test_notes_past_last_downbeat(self):
        score = validate_score(Score(
            (Note(Fraction(0), Fraction(1), 60), Note(Fraction(9), Fraction(1), 62),
             Note(Fraction(13), Fraction(1), 64)),
            (Fraction(0), Fraction(4))))
        tokens = score_tokens(score)
        self.assertEqual([m for _, m in tokens], [0, 2, 3])
        self.assertEqual([t.pos for t, _ in tokens], [0, 4, 4])
        check_bar_flags(tokens)
        for note, restored in zip(score.notes, detokenize(tokens).notes):
            self.assertLessEqual(abs(restored.onset - note.onset), Fraction(1, 8))

    def test_no_downbeats_reads_four_four(self):
        score = validate_score(Score(
            (Note(Fraction(0), Fraction(1), 60), Note(Fraction(20), Fraction(1), 62)), ()))
        with self.assertLogs("cpbert.machinery.tokens", "WARNING"):
            tokens = score_tokens(score)
        self.assertEqual([m for _, m in tokens], [0, 5])
        self.assertEqual([t.pos for t, _ in tokens], [0, 0])
        self.assertEqual([t.b for t, _ in tokens], [1, 1])
        self.assertEqual(tokenize(score), tokens)

    def test_seconds_rejected(self):
        with self.assertRaises(TokenizerError):
            tokenize(Score(time_unit=constants.SECONDS_UNIT))

    def test_quantization_error_bounds(self):
        rng = self.rng(6)
        notes = []
        for _ in range(2000):
            bar = int(rng.integers(0, 20))
            offset = Fraction(int(rng.integers(0, 1860)), 480)
            notes.append(Note(4 * bar + offset, Fraction(int(rng.integers(30, 3841)), 480),
                int(rng.integers(0, 128))))
        score = validate_score(Score(tuple(notes), tuple(Fraction(4 * m) for m in range(20))))
        for note, (token, m) in zip(score.notes, tokenize(score)):
            onset = 4 * m + Fraction(token.pos, 4)
            self.assertLessEqual(abs(onset - note.onset), Fraction(1, 8))
            self.assertLessEqual(abs(Fraction(token.dur, 8) - note.duration), Fraction(1, 16))
            self.assertEqual(token.pit % 12, note.pitch % 12)


class SegmentTest(TestBase):
    def tokens(self, n):
        return [(CPToken(1 if i % 4 == 0 else 0, 0, 60, 8), i // 4) for i in range(n)]

    def test_lengths(self):
        self.assertEqual([len(s) for s in segment(self.tokens(1024), 1024)], [1024])
        self.assertEqual([len(s) for s in segment(self.tokens(1025), 1024)], [1024, 1])
        self.assertEqual([len(s) for s in segment(self.tokens(3000), 1024)], [1024, 1024, 952])

    def test_partition(self):
        tokens = self.tokens(3000)
        segments = segment(tokens, 1024, "piece")
        self.assertEqual([p for s in segments for p in s.pairs()], tokens)
        self.assertEqual([s.ordinal for s in segments], [0, 1, 2])
        # the first token keeps its original bar flag
        self.assertEqual(segments[1].tokens[0].b, tokens[1024][0].b)

    def test_bad_length(self):
        with self.assertRaises(TokenizerError):
            segment(self.tokens(3), 0)

    def test_empty_piece(self):
        self.assertEqual(segment([], 16), [])

    def test_score_to_segments(self):
        score = self.grid_score(self.rng(7), n_notes=40)
        segments = score_to_segments(score, 16, "p")
        self.assertEqual(sum(len(s) for s in segments), 40)


class DetokenizeTest(TestBase):
    def test_single_token(self):
        score = detokenize([(CPToken(1, 0, 22, 1), 0)])
        self.assertEqual(score.notes, (Note(Fraction(0), Fraction(1, 8), 22),))
        self.assertEqual(score.downbeats, (Fraction(0),))

    def test_grid_round_trip(self):
        rng = self.rng(8)
        for _ in range(50):
            score = self.grid_score(rng, n_notes=int(rng.integers(1, 200)))
            self.assertEqual(detokenize(tokenize(score)), score)

    def test_idempotence(self):
        rng = self.rng(9)
        tokens = [(CPToken(0, int(rng.integers(0, 16)), int(rng.integers(22, 108)),
            int(rng.integers(1, 65))), int(rng.integers(0, 10))) for _ in range(100)]
        once = detokenize(tokens)
        self.assertEqual(detokenize(tokenize(once)), once)


class VocabSpecTest(TestBase):
    def test_reserved_ids(self):
        vocab = DEFAULT_VOCAB
        self.assertEqual([vocab.mask_id(a) for a in constants.ATTRIBUTES], [2, 16, 86, 64])
        self.assertEqual(vocab.pad_ids(), (3, 17, 87, 65))
        self.assertEqual(vocab.mask_token(), CPToken(2, 16, 108, 65))
        self.assertFalse(vocab.is_clean(vocab.mask_token()))

    def test_encode_decode(self):
        vocab = VocabSpec()
        token = CPToken(1, 15, 107, 64)
        self.assertEqual(vocab.encode(token), (1, 15, 85, 63))
        self.assertEqual(vocab.decode(vocab.encode(token)), token)

    def test_segment_ids(self):
        seg = Segment((CPToken(1, 0, 22, 1),), (0,))
        self.assertEqual(seg.ids().tolist(), [[1, 0, 0, 0]])
        self.assertEqual(seg.clean_tokens, seg.tokens)
