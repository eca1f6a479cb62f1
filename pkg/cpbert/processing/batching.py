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
import queue
import logging
import threading
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from cpbert.utils import constants
from cpbert.machinery.tokens import DEFAULT_VOCAB
from cpbert.machinery.corruption import corrupt_segment, segment_rng
from cpbert.machinery.pianoroll import build_targets, stack_targets

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    ids: torch.Tensor           # (B, n, 4) model input, possibly corrupted
    clean_ids: torch.Tensor     # (B, n, 4)
    pad_mask: torch.Tensor      # (B, n) bool
    corrupted: torch.Tensor     # (B, n) bool
    pianoroll: Optional[torch.Tensor] = None   # (B, n, 16, 86)
    chroma: Optional[torch.Tensor] = None      # (B, n, 16, 12)
    pos: Optional[torch.Tensor] = None         # (B, n)
    records: List = field(default_factory=list)

    def __len__(self):
        return self.ids.shape[0]


def pad_ids(arrays, vocab=DEFAULT_VOCAB):
    """Stack (n_i, 4) id arrays, padding to the longest with the pad ids."""
    length = max((a.shape[0] for a in arrays), default=0)
    out = np.tile(np.array(vocab.pad_ids(), dtype=np.int64), (len(arrays), length, 1))
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
    return torch.from_numpy(out)


def collate(segments, vocab=DEFAULT_VOCAB, records=None, with_targets=True):
    """Batch corrupted segments; clean ids and targets come from clean_tokens."""
    ids = pad_ids([s.ids(vocab) for s in segments], vocab)
    clean = pad_ids([s.clean_ids(vocab) for s in segments], vocab)
    batch_size, length = ids.shape[0], ids.shape[1]
    pad_mask = (clean == torch.tensor(vocab.pad_ids())).all(dim=-1)

    corrupted = torch.zeros((batch_size, length), dtype=torch.bool)
    for i, record in enumerate(records or []):
        if record is not None and record.corrupted_indices:
            corrupted[i, list(record.corrupted_indices)] = True

    batch = Batch(ids, clean, pad_mask, corrupted, records=list(records or []))
    if with_targets:
        pr = np.zeros((batch_size, length, constants.TATUMS_PER_BAR, constants.N_PITCHES),
            dtype=np.float32)
        cm = np.zeros((batch_size, length, constants.TATUMS_PER_BAR, constants.N_CHROMA),
            dtype=np.float32)
        pos = np.zeros((batch_size, length), dtype=np.int64)
        for i, s in enumerate(segments):
            pr[i], cm[i], pos[i] = stack_targets(build_targets(s), length)
        batch.pianoroll = torch.from_numpy(pr)
        batch.chroma = torch.from_numpy(cm)
        batch.pos = torch.from_numpy(pos)
    return batch


def corrupt_batch(segments, ordinals, config, epoch, vocab=DEFAULT_VOCAB,
        with_targets=True, audit=None):
    corrupted, records = [], []
    for segment, ordinal in zip(segments, ordinals):
        rng = segment_rng(config.seed, ordinal, epoch)
        seg, record = corrupt_segment(segment, config, rng, audit, vocab)
        corrupted.append(seg)
        records.append(record)
    return collate(corrupted, vocab, records, with_targets)


class BatchPrefetcher(object):
    """Runs a batch producer on one thread behind a bounded queue.

    Batches come out in production order, so results match the synchronous path.
    Leaving the iteration early (or calling close) stops the producer."""
    _DONE = object()
    _POLL = 0.05

    def __init__(self, produce, jobs, depth=2):
        self.produce = produce
        self.jobs = list(jobs)
        self.queue = queue.Queue(maxsize=max(1, depth))
        self.error = None
        self.stopped = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _put(self, item):
        while not self.stopped.is_set():
            try:
                self.queue.put(item, timeout=self._POLL)
                return True
            except queue.Full:
                continue
        return False

    def _run(self):
        try:
            for job in self.jobs:
                if self.stopped.is_set() or not self._put(self.produce(job)):
                    return
        except Exception as e:
            self.error = e
        finally:
            self._put(self._DONE)

    def close(self):
        self.stopped.set()
        self.thread.join()

    def __iter__(self):
        try:
            while True:
                item = self.queue.get()
                if item is self._DONE:
                    break
                yield item
        finally:
            self.close()
        if self.error is not None:
            raise self.error
