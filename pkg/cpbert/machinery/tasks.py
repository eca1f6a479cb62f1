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
import os
import json
import bisect
import logging
import statistics
from collections import Counter
from dataclasses import dataclass, asdict
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from cpbert import utils
from cpbert.utils import constants
from cpbert.machinery.scores import Note, Score, load_score, validate_score
from cpbert.machinery.tokens import score_tokens, segment

logger = logging.getLogger(__name__)

ACC, F1, CSR = constants.ACCURACY_METRIC, constants.F1_METRIC, constants.CSR_METRIC
NOTE, SEQ = constants.NOTE_LEVEL, constants.SEQUENCE_LEVEL

# name -> (level, default classes, metric, default split)
TASKS = {
    "SGC":  (SEQ, 5, ACC, "fixed"),
    "PS":   (SEQ, 8, ACC, "k-fold"),
    "ER":   (SEQ, 4, ACC, "k-fold"),
    "BP":   (NOTE, 2, F1, "fixed"),
    "DbP":  (NOTE, 2, F1, "fixed"),
    "CR":   (NOTE, 12, CSR, "fixed"),
    "LK":   (NOTE, 24, CSR, "fixed"),
    "ME":   (NOTE, 3, ACC, "fixed"),
    "VE":   (NOTE, 6, ACC, "fixed"),
    "MNID": (NOTE, 2, F1, "k-fold"),
    "VF":   (NOTE, 240, ACC, "fixed"),
}

# velocity upper-exclusive edges for pp, p, mp, mf, f | ff
DEFAULT_VELOCITY_EDGES = (32, 48, 64, 80, 96)

TEMPO_RANGE = (40, 200)


@dataclass
class TaskSpec:
    name: str
    level: Optional[str] = None
    n_classes: Optional[int] = None
    metric: Optional[str] = None
    split: Optional[str] = None
    k: int = 5
    seed: int = 0
    velocity_edges: Tuple[int, ...] = DEFAULT_VELOCITY_EDGES
    tempo_fold_once: bool = False

    def __post_init__(self):
        if self.name not in TASKS:
            raise TaskError("Unknown task: %s" % self.name)
        self.velocity_edges = check_velocity_edges(self.velocity_edges)
        if not isinstance(self.tempo_fold_once, bool):
            raise TaskError("tempo_fold_once must be a boolean")
        level, n_classes, metric, split = TASKS[self.name]
        if self.name == "VE":
            n_classes = len(self.velocity_edges) + 1
        self.level = self.level or level
        self.n_classes = self.n_classes or n_classes
        self.metric = self.metric or metric
        self.split = self.split or split
        if self.level != level:
            raise TaskError("Task %s is %s-level, not %s-level" % (self.name, level, self.level))
        if self.metric != metric:
            raise TaskError("Task %s is scored with %s" % (self.name, metric))
        if self.n_classes < 1:
            raise TaskError("n_classes must be >= 1")
        if self.name == "VE" and self.n_classes != n_classes:
            raise TaskError("VE with %d velocity edges has %d classes"
                % (len(self.velocity_edges), n_classes))
        if self.metric == F1 and self.n_classes != 2:
            raise TaskError("F1 tasks are binary")
        if self.split not in ("fixed", "k-fold"):
            raise TaskError("Unknown split kind: %s" % self.split)
        if self.split == "k-fold" and self.k < 2:
            raise TaskError("k-fold needs k >= 2")

    def to_dict(self):
        doc = asdict(self)
        doc["velocity_edges"] = list(self.velocity_edges)
        return doc


def check_velocity_edges(edges):
    edges = tuple(edges)
    if not edges:
        raise TaskError("velocity_edges must not be empty")
    for e in edges:
        if isinstance(e, bool) or not isinstance(e, int) or not 1 <= e <= 127:
            raise TaskError("velocity edge %r out of range [1, 127]" % (e,))
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise TaskError("velocity_edges must be strictly increasing")
    return edges


@dataclass(frozen=True)
class LabeledExample:
    segment: object
    labels: Tuple[int, ...]     # per-note labels, or a single sequence label
    piece_id: str


@dataclass
class LabeledPiece:
    piece_id: str
    score: Score                # beat-unit score the tatum grid refers to
    tokens: list
    note_labels: Optional[list] = None
    sequence_label: Optional[int] = None
    tatum_labels: Optional[list] = None


def estimate_tempo(durations, fold_once=False):
    """Global tempo from the median note duration, folded into [40, 200] BPM."""
    if not durations:
        raise TaskError("empty note list")
    beat = statistics.median(utils.to_fraction(d) for d in durations)
    if beat <= 0:
        raise TaskError("non-positive median duration")
    tempo = Fraction(60) / beat
    low, high = TEMPO_RANGE
    if fold_once:
        if tempo < low:
            tempo *= 2
        elif tempo > high:
            tempo /= 2
        return tempo
    while tempo < low:
        tempo *= 2
    while tempo > high:
        tempo /= 2
    return tempo


def bp_quantize(score, fold_once=False):
    """Seconds-unit score -> (beat-unit 4/4 score, order) at a constant tempo.

    order[i] is the input index of output note i."""
    if score.time_unit != constants.SECONDS_UNIT:
        raise TaskError("bp_preprocess needs a seconds-unit score")
    if not score.notes:
        raise TaskError("empty note list")

    tempo = estimate_tempo([n.duration for n in score.notes], fold_once)
    beats_per_second = tempo / 60
    first = min(n.onset for n in score.notes)

    quantized = []
    for idx, note in enumerate(score.notes):
        onset = Fraction(utils.round_half_up(
            (note.onset - first) * beats_per_second * constants.TATUMS_PER_BEAT),
            constants.TATUMS_PER_BEAT)
        dur = max(1, utils.round_half_up(
            note.duration * beats_per_second * constants.DUR_PER_BEAT))
        quantized.append((Note(onset, Fraction(dur, constants.DUR_PER_BEAT),
            note.pitch, note.velocity, note.track), idx))
    quantized.sort(key=lambda item: (item[0].sort_key(), item[1]))

    last = max(n.onset for n, _ in quantized)
    bars = int(last // constants.BAR_CROTCHETS) + 1
    downbeats = tuple(Fraction(constants.BAR_CROTCHETS * m) for m in range(bars))
    meta = dict(score.source_meta)
    meta["tempo_bpm"] = float(tempo)
    out = validate_score(Score(tuple(n for n, _ in quantized), downbeats,
        constants.BEATS_UNIT, meta))
    return out, [idx for _, idx in quantized]


def bp_preprocess(score, fold_once=False):
    return bp_quantize(score, fold_once)[0]


def velocity_to_class(velocity, edges=DEFAULT_VELOCITY_EDGES):
    if isinstance(velocity, bool) or not 1 <= velocity <= 127:
        raise TaskError("velocity %r out of range [1, 127]" % (velocity,))
    return bisect.bisect_right(edges, velocity)


def onset_tatum(note):
    return utils.round_half_up(note.onset * constants.TATUMS_PER_BEAT)


def project_tatum_labels(score, tatum_labels):
    """Each note takes the label of its onset tatum."""
    labels = []
    for idx, note in enumerate(score.notes):
        t = onset_tatum(note)
        if t >= len(tatum_labels):
            raise TaskError("coverage gap: note %d starts at tatum %d, labels cover %d"
                % (idx, t, len(tatum_labels)))
        labels.append(tatum_labels[t])
    return labels


def _group_label(preds):
    counts = Counter(preds)
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def notes_to_tatum_predictions(note_preds, score, n_tatums):
    """Carry the most recent onset's prediction forward over the tatum grid."""
    if len(note_preds) != len(score.notes):
        raise TaskError("%d predictions for %d notes" % (len(note_preds), len(score.notes)))
    if not score.notes:
        raise TaskError("no notes to project")

    groups = {}
    for note, pred in zip(score.notes, note_preds):
        groups.setdefault(onset_tatum(note), []).append(int(pred))
    onsets = sorted(groups)
    labels = {t: _group_label(groups[t]) for t in onsets}

    out = []
    warned = False
    for t in range(n_tatums):
        i = bisect.bisect_right(onsets, t) - 1
        if i < 0:
            if not warned:
                logger.warning("Tatum %d precedes the first onset; using the first "
                    "note's prediction" % t)
                warned = True
            i = 0
        out.append(labels[onsets[i]])
    return out


def make_folds(piece_ids, k, seed):
    ids = list(piece_ids)
    if k < 2:
        raise TaskError("k must be >= 2")
    if len(ids) < k:
        raise TaskError("too few pieces (%d) for %d folds" % (len(ids), k))
    order = np.random.default_rng(utils.derive_seed(seed, k)).permutation(len(ids))
    return [sorted(ids[j] for j in order[i::k]) for i in range(k)]


def load_label_file(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.loads(f.read())
        except ValueError as e:
            raise TaskError("Invalid label file %s: %s" % (path, e)) from e
    for key in ("piece", "level", "labels"):
        if key not in doc:
            raise TaskError("Label file %s lacks '%s'" % (path, key))
    if doc["level"] not in (NOTE, SEQ, constants.TATUM_LEVEL):
        raise TaskError("Label file %s: unknown level %s" % (path, doc["level"]))
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0
            for v in doc["labels"]):
        raise TaskError("Label file %s: labels must be non-negative integers" % path)
    return doc


def load_split_manifest(path):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.loads(f.read())
    if "folds" in doc:
        return {"folds": int(doc["folds"]), "seed": int(doc.get("seed", 0))}
    for key in (constants.TRAIN_SPLIT, constants.VALID_SPLIT, constants.TEST_SPLIT):
        if key not in doc:
            raise TaskError("Split manifest %s lacks '%s'" % (path, key))
    return doc


def _check_range(labels, task, piece_id):
    for v in labels:
        if v >= task.n_classes:
            raise TaskError("piece %s: label %d >= n_classes %d" % (piece_id, v, task.n_classes))


def prepare_piece(piece_id, score, label_doc, task):
    order = None
    if score.time_unit == constants.SECONDS_UNIT:
        score, order = bp_quantize(score, task.tempo_fold_once)

    tokens = score_tokens(score)
    piece = LabeledPiece(piece_id, score, tokens)

    if label_doc is None:
        if task.name != "VE":
            raise TaskError("piece %s has no label file" % piece_id)
        if any(n.velocity is None for n in score.notes):
            raise TaskError("piece %s: VE labels need note velocities" % piece_id)
        piece.note_labels = [velocity_to_class(n.velocity, task.velocity_edges)
                             for n in score.notes]
        return piece

    labels = list(label_doc["labels"])
    level = label_doc["level"]
    if task.level == SEQ:
        if level != SEQ or len(labels) != 1:
            raise TaskError("piece %s: sequence task needs one sequence label" % piece_id)
        _check_range(labels, task, piece_id)
        piece.sequence_label = labels[0]
        return piece

    if level == SEQ:
        raise TaskError("piece %s: note-level task got sequence labels" % piece_id)
    _check_range(labels, task, piece_id)
    if level == constants.TATUM_LEVEL:
        piece.tatum_labels = labels
        piece.note_labels = project_tatum_labels(score, labels)
        return piece

    if len(labels) != len(score.notes):
        raise TaskError("piece %s: label/note count mismatch (%d labels, %d notes)"
            % (piece_id, len(labels), len(score.notes)))
    if order is not None:
        labels = [labels[i] for i in order]
    piece.note_labels = labels
    return piece


def piece_examples(piece, max_len):
    examples = []
    for seg in segment(piece.tokens, max_len, piece.piece_id):
        if piece.sequence_label is not None:
            labels = (piece.sequence_label,)
        else:
            start = seg.ordinal * max_len
            labels = tuple(piece.note_labels[start:start + len(seg)])
        examples.append(LabeledExample(seg, labels, piece.piece_id))
    return examples


def load_task_dataset(scores_dir, labels_dir, task):
    """Pieces keyed by file stem; label files are <stem>.json under labels_dir."""
    pieces = {}
    for name in sorted(os.listdir(scores_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".mid", ".midi", ".json"):
            continue
        score = load_score(os.path.join(scores_dir, name))
        label_path = os.path.join(labels_dir, stem + ".json") if labels_dir else None
        label_doc = load_label_file(label_path) \
            if label_path and os.path.exists(label_path) else None
        pieces[stem] = prepare_piece(stem, score, label_doc, task)
    if not pieces:
        raise TaskError("no scores found in %s" % scores_dir)
    return pieces


def resolve_splits(piece_ids, task, split_doc=None):
    """[(name, {train, valid, test})]: one entry for fixed splits, k for folds."""
    ids = sorted(piece_ids)
    if split_doc and "folds" in split_doc:
        k, seed = split_doc["folds"], split_doc["seed"]
    elif task.split == "k-fold":
        k, seed = task.k, task.seed
    else:
        if not split_doc:
            raise TaskError("task %s needs a split manifest" % task.name)
        known = set(ids)
        for key in (constants.TRAIN_SPLIT, constants.VALID_SPLIT, constants.TEST_SPLIT):
            missing = [p for p in split_doc[key] if p not in known]
            if missing:
                raise TaskError("split %s names unknown pieces: %s" % (key, ", ".join(missing)))
        return [("fixed", {key: list(split_doc[key]) for key in
            (constants.TRAIN_SPLIT, constants.VALID_SPLIT, constants.TEST_SPLIT)})]

    folds = make_folds(ids, k, seed)
    runs = []
    for i in range(k):
        valid_idx = (i + 1) % k
        train = sorted(p for j, fold in enumerate(folds) if j not in (i, valid_idx) for p in fold)
        runs.append(("fold%d" % i, {constants.TRAIN_SPLIT: train,
            constants.VALID_SPLIT: folds[valid_idx], constants.TEST_SPLIT: folds[i]}))
    return runs


class TaskError(Exception):
    pass
