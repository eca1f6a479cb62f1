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
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, recall_score

from cpbert.utils import constants

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    metric: str
    value: float
    support: int
    # raw counts make micro-averaging across pieces or folds exact
    counts: Dict[str, int] = field(default_factory=dict)
    per_class: Optional[Dict[int, float]] = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise MetricError("metric value %r outside [0, 1]" % self.value)
        if self.support < 1:
            raise MetricError("metric support must be >= 1")

    def to_dict(self):
        d = {"metric": self.metric, "value": self.value, "support": self.support,
             "counts": dict(self.counts)}
        if self.per_class is not None:
            d["per_class"] = {str(k): v for k, v in sorted(self.per_class.items())}
        return d


def _check(pred, gt):
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise MetricError("length mismatch: %d predictions, %d labels" % (len(pred), len(gt)))
    if not gt:
        raise MetricError("metrics need at least one label")
    return np.asarray(pred, dtype=np.int64), np.asarray(gt, dtype=np.int64)


def per_class_recall(pred, gt):
    classes = np.unique(gt)
    recalls = recall_score(gt, pred, labels=classes, average=None, zero_division=0)
    return {int(c): float(r) for c, r in zip(classes, recalls)}


def accuracy_report(pred, gt, metric=constants.ACCURACY_METRIC):
    pred, gt = _check(pred, gt)
    correct = int(accuracy_score(gt, pred, normalize=False))
    return MetricReport(metric, float(accuracy_score(gt, pred)), len(gt),
        {"correct": correct, "total": len(gt)}, per_class_recall(pred, gt))


def accuracy(pred, gt):
    return accuracy_report(pred, gt).value


def f1_report(pred, gt):
    pred, gt = _check(pred, gt)
    for v in set(pred.tolist()) | set(gt.tolist()):
        if v not in (0, 1):
            raise MetricError("f1_binary expects labels in {0, 1}, got %r" % v)
    _, fp, fn, tp = (int(c) for c in confusion_matrix(gt, pred, labels=[0, 1]).ravel())
    if tp == 0:
        logger.warning("F1 undefined or zero (no true positives); reporting 0")
    value = float(f1_score(gt, pred, pos_label=1, zero_division=0))
    return MetricReport(constants.F1_METRIC, value, len(gt),
        {"tp": tp, "fp": fp, "fn": fn, "total": len(gt)})


def _f1_from_counts(tp, fp, fn):
    if tp == 0:
        logger.warning("F1 undefined or zero (no true positives); reporting 0")
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def f1_binary(pred, gt):
    return f1_report(pred, gt).value


def csr_report(pred_tatums, gt_tatums):
    # uniform tatum grid: time-weighted recall is tatum accuracy
    return accuracy_report(pred_tatums, gt_tatums, constants.CSR_METRIC)


def csr(pred_tatums, gt_tatums):
    return csr_report(pred_tatums, gt_tatums).value


METRICS = {
    constants.ACCURACY_METRIC: accuracy_report,
    constants.F1_METRIC: f1_report,
    constants.CSR_METRIC: csr_report,
}


def compute(metric, pred, gt):
    if metric not in METRICS:
        raise MetricError("Unknown metric: %s" % metric)
    return METRICS[metric](pred, gt)


def aggregate_reports(reports):
    """Micro-average over concatenated supports."""
    reports = list(reports)
    if not reports:
        raise MetricError("nothing to aggregate")
    metric = reports[0].metric
    if any(r.metric != metric for r in reports):
        raise MetricError("cannot aggregate different metrics")
    counts = Counter()
    for r in reports:
        counts.update(r.counts)
    support = sum(r.support for r in reports)
    if metric == constants.F1_METRIC:
        value = _f1_from_counts(counts["tp"], counts["fp"], counts["fn"])
    else:
        value = counts["correct"] / counts["total"]
    return MetricReport(metric, value, support, dict(counts))


def mean_value(reports):
    reports = list(reports)
    return sum(r.value for r in reports) / len(reports)


class MetricsLog(object):
    """Line records {step, split, metric, value} in arrival order."""

    def __init__(self):
        self.records = []

    def add(self, step, split, metric, value):
        self.records.append({"step": int(step), "split": split,
            "metric": metric, "value": float(value)})

    def add_all(self, step, split, values):
        for metric in sorted(values):
            self.add(step, split, metric, values[metric])

    def get(self):
        return self.records

    def series(self, split, metric):
        return [(r["step"], r["value"]) for r in self.records
            if r["split"] == split and r["metric"] == metric]


class MetricError(Exception):
    pass
