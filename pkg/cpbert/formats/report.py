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
from cpbert.utils import constants
from cpbert.machinery.metrics import aggregate_reports, mean_value

from .base import BaseFormatter


class Report(BaseFormatter):
    """Per-run test reports plus their mean and micro-average across folds."""

    def __init__(self, task, runs):
        self.task = task
        self.runs = runs

    def generate(self):
        output = {"task": self.task.to_dict(), "runs": {}}
        tests = []
        for name, result in self.runs:
            entry = {"best_step": result["best_step"]}
            for split in (constants.VALID_SPLIT, constants.TEST_SPLIT):
                report = result.get(split)
                entry[split] = report.to_dict() if report is not None else None
            if result.get(constants.TEST_SPLIT) is not None:
                tests.append(result[constants.TEST_SPLIT])
            output["runs"][name] = entry
        if tests:
            output["mean"] = mean_value(tests)
            output["micro"] = aggregate_reports(tests).to_dict()
        return output
