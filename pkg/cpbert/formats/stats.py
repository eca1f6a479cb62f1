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
import torch

from cpbert.utils import constants
from cpbert.model.encoder import ModelConfig, count_parameters
from cpbert.model.heads import PretrainModel

from .base import BaseFormatter


class CorpusStats(BaseFormatter):
    """Note counts and per-attribute value histograms over a token corpus."""

    def __init__(self, corpus, manifest=None):
        self.corpus = corpus
        self.manifest = manifest

    def histogram(self, attr):
        i = constants.ATTRIBUTES.index(attr)
        counts = Counter(token[i] for _, tokens in self.corpus for token, _ in tokens)
        values = range(constants.ATTR_LOW[attr], constants.ATTR_HIGH[attr] + 1)
        return [(v, counts.get(v, 0)) for v in values]

    def generate(self):
        output = {
            "n_pieces": len(self.corpus),
            "n_notes": sum(len(tokens) for _, tokens in self.corpus),
            "n_bars": sum(tokens[-1][1] + 1 for _, tokens in self.corpus if tokens),
            "histograms": {attr: {str(v): c for v, c in self.histogram(attr)}
                for attr in constants.ATTRIBUTES},
        }
        if self.manifest is not None:
            output["manifest_n_notes"] = self.manifest.get("n_notes")
            output["checksum"] = self.manifest.get("checksum")
        return output


class AuditSummary(BaseFormatter):
    """Counts and displacement statistics per corrupted attribute."""

    def __init__(self, entries):
        self.entries = list(entries)

    def generate(self):
        output = {"n_changes": len(self.entries),
                  "n_segments": len({e["segment"] for e in self.entries}),
                  "attributes": {}}
        for attr in constants.ATTRIBUTES:
            deltas = np.array([e["new"] - e["old"] for e in self.entries
                if e["attribute"] == attr], dtype=np.float64)
            if not deltas.size:
                output["attributes"][attr] = {"count": 0}
                continue
            output["attributes"][attr] = {
                "count": int(deltas.size),
                "mean_abs_delta": float(np.abs(deltas).mean()),
                "max_abs_delta": float(np.abs(deltas).max()),
            }
        return output


class CheckpointStats(BaseFormatter):
    """Stored parameter count against the count the recorded config implies."""

    def __init__(self, tensors, config, meta):
        self.tensors = tensors
        self.config = config
        self.meta = meta

    def generate(self):
        stored = sum(int(np.prod(t.shape)) for name, t in self.tensors.items()
            if not name.startswith("optim/"))
        model_config = ModelConfig(**self.config)
        with torch.device("meta"):
            expected = count_parameters(PretrainModel(model_config))
        return {
            "kind": self.meta.get("kind"),
            "step": self.meta.get("step"),
            "best_valid_accuracy": self.meta.get("best_valid_accuracy"),
            "n_parameters": stored,
            "config_parameters": expected,
            "n_tensors": len(self.tensors),
        }
