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
import logging
from dataclasses import replace

import torch

from cpbert import formats
from cpbert.utils import constants
from cpbert.config import ConfigError, write_resolved
from cpbert.machinery.scores import ScoreError, load_score
from cpbert.machinery.tokens import TokenizerError, score_tokens
from cpbert.machinery.shards import ShardError, write_shard, write_manifest, read_manifest, \
    load_corpus
from cpbert.machinery.checkpoint import save_checkpoint, load_checkpoint
from cpbert.machinery.metrics import MetricsLog
from cpbert.machinery.tasks import TaskSpec, load_task_dataset, load_split_manifest, \
    resolve_splits
from cpbert.model.encoder import ModelConfig
from cpbert.processing.pretrain import Pretrainer
from cpbert.processing.finetune import Finetuner

logger = logging.getLogger(__name__)


def configure_logging():
    level = os.environ.get(constants.LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(
        format=constants.LOG_FORMAT,
        datefmt=constants.LOG_DATEFMT,
        level=getattr(logging, level, logging.INFO)
    )


def find_scores(inputs):
    """Score files under the given files and directories, in sorted order."""
    found = []
    for entry in inputs:
        if os.path.isdir(entry):
            for root, dirs, files in os.walk(entry):
                dirs.sort()
                for name in sorted(files):
                    if os.path.splitext(name)[1].lower() in constants.SCORE_EXTENSIONS:
                        path = os.path.join(root, name)
                        found.append((os.path.relpath(path, entry), path))
        elif os.path.exists(entry):
            found.append((os.path.basename(entry), entry))
        else:
            raise ConfigError("input does not exist: %s" % entry)
    return found


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


class CPBertRun(object):
    def __init__(self, config, operation):
        self.config = config
        self.operation = operation
        self.log = MetricsLog()
        self.result = None
        self.setUp()

    def setUp(self):
        self.out_dir = self.config.out
        os.makedirs(self.out_dir, exist_ok=True)
        torch.use_deterministic_algorithms(True)

    def out_path(self, name):
        return os.path.join(self.out_dir, name)

    def run(self):
        ops = {
            constants.INGEST_OP: self.ingest,
            constants.PRETRAIN_OP: self.pretrain,
            constants.FINETUNE_OP: self.finetune,
            constants.EVAL_OP: self.evaluate,
            constants.INSPECT_OP: self.inspect,
        }
        if self.operation not in ops:
            raise ConfigError("Unknown operation: %s" % self.operation)
        logger.info("Starting %s", self.operation)
        write_resolved(self.config, self.out_dir)
        self.result = ops[self.operation]()
        return self.result

    def output(self):
        return self.result

    def ingest(self):
        self.config.require("inputs")
        files = find_scores(self.config.paths.inputs)
        if not files:
            raise ShardError("no score files found in inputs")

        pieces, failures = [], []
        for piece_id, path in files:
            try:
                pieces.append((piece_id, score_tokens(load_score(path))))
            except (ScoreError, TokenizerError) as e:
                logger.error("Failed to ingest %s: %s", path, e)
                failures.append(path)

        entries, shard_names = [], []
        for i, start in enumerate(range(0, len(pieces), constants.PIECES_PER_SHARD)):
            name = constants.SHARD_NAME.format(i)
            chunk = pieces[start:start + constants.PIECES_PER_SHARD]
            write_shard(self.out_path(name), [tokens for _, tokens in chunk])
            shard_names.append(name)
            for index, (piece_id, tokens) in enumerate(chunk):
                entries.append({"piece_id": piece_id, "shard": name,
                    "index": index, "n_notes": len(tokens)})
        manifest = write_manifest(self.out_dir, entries, shard_names)
        logger.info("Ingested %d pieces (%d notes)", manifest["n_pieces"], manifest["n_notes"])

        if failures:
            raise ShardError("failed to ingest %d file(s): %s"
                % (len(failures), ", ".join(failures)))
        return {"n_pieces": manifest["n_pieces"], "n_notes": manifest["n_notes"],
                "checksum": manifest["checksum"]}

    def pretrain(self):
        self.config.require("manifest")
        corpus = load_corpus(self.config.paths.manifest)
        audit = [] if self.config.paths.audit else None
        trainer = Pretrainer(corpus, self.config.model, self.config.optimizer,
            self.config.corruption, self.config.schedule, self.config.seed,
            self.log, audit)
        tensors, model_config, meta = trainer.train()

        path = self.out_path(constants.CHECKPOINT_NAME)
        save_checkpoint(path, tensors, model_config, meta)
        with open(self.out_path(constants.METRICS_NAME), "w", encoding="utf-8") as f:
            f.write(formats.MetricsLines(self.log).generate())
        if audit is not None:
            write_lines(self.config.paths.audit, audit)
        return {"checkpoint": path, "best_step": meta["step"],
                "best_valid_accuracy": meta["best_valid_accuracy"]}

    def _task(self):
        if self.config.task is None:
            raise ConfigError("a task section is required")
        return self.config.task

    def _model_config(self, config_doc):
        model_config = ModelConfig(**config_doc)
        if self.config.schedule.max_len > model_config.max_len:
            raise ConfigError("max_seq_len %d exceeds the checkpoint's max_len %d"
                % (self.config.schedule.max_len, model_config.max_len))
        return model_config

    def finetune(self):
        task = self._task()
        self.config.require("scores")
        encoder_tensors = None
        model_config = self.config.model
        if self.config.paths.checkpoint:
            self.config.require("checkpoint")
            encoder_tensors, config_doc, _ = load_checkpoint(self.config.paths.checkpoint)
            model_config = self._model_config(config_doc)
        else:
            logger.warning("No checkpoint given; fine-tuning from random initialisation")

        pieces = load_task_dataset(self.config.paths.scores, self.config.paths.labels, task)
        split_doc = load_split_manifest(self.config.paths.split) \
            if self.config.paths.split else None
        runs = []
        for name, split in resolve_splits(pieces.keys(), task, split_doc):
            logger.info("Fine-tuning %s (%s)", task.name, name)
            run_log = MetricsLog()
            trainer = Finetuner(task, pieces, split, model_config, self.config.optimizer,
                self.config.schedule, self.config.seed, encoder_tensors, run_log)
            result = trainer.train()
            for record in run_log.get():
                self.log.records.append(dict(record, run=name))
            meta = {"kind": "finetune", "task": task.to_dict(), "run": name,
                    "best_step": result["best_step"], "seed": self.config.seed}
            save_checkpoint(self.out_path("%s-%s.ckpt" % (task.name, name)),
                trainer.model.state_dict(), model_config.to_dict(), meta)
            runs.append((name, result))

        report = formats.Report(task, runs).generate()
        with open(self.out_path(constants.REPORT_NAME), "w", encoding="utf-8") as f:
            f.write(json.dumps(report, indent=2, sort_keys=True))
        with open(self.out_path(constants.METRICS_NAME), "w", encoding="utf-8") as f:
            f.write(formats.MetricsLines(self.log).generate())
        return report

    def evaluate(self):
        self.config.require("checkpoint", "scores")
        tensors, config_doc, meta = load_checkpoint(self.config.paths.checkpoint)
        if meta.get("kind") != "finetune":
            raise ConfigError("eval needs a fine-tuned checkpoint")
        task = TaskSpec(**meta["task"])
        model_config = self._model_config(config_doc)

        pieces = load_task_dataset(self.config.paths.scores, self.config.paths.labels, task)
        if self.config.paths.split:
            split = load_split_manifest(self.config.paths.split)
            if "folds" in split:
                raise ConfigError("eval needs a fixed split manifest")
        else:
            split = {constants.TEST_SPLIT: sorted(pieces)}

        trainer = Finetuner(task, pieces, split, model_config, self.config.optimizer,
            replace(self.config.schedule, steps=0), self.config.seed)
        trainer.load_model_state(tensors)
        report = {"task": task.to_dict(), "splits": {}}
        for name in (constants.TRAIN_SPLIT, constants.VALID_SPLIT, constants.TEST_SPLIT):
            if not split.get(name):
                continue
            result = trainer.evaluate(name)
            report["splits"][name] = result.to_dict()
            logger.info("%s %s %.4f", name, result.metric, result.value)
        with open(self.out_path(constants.REPORT_NAME), "w", encoding="utf-8") as f:
            f.write(json.dumps(report, indent=2, sort_keys=True))
        return report

    def _write(self, name, text):
        with open(self.out_path(name), "w", encoding="utf-8") as f:
            f.write(text)
        return name

    def inspect(self):
        paths = self.config.paths
        if not any((paths.manifest, paths.checkpoint, paths.audit, paths.metrics)):
            raise ConfigError("inspect needs a manifest, checkpoint, audit or metrics path")
        output = {"files": []}

        if paths.manifest:
            self.config.require("manifest")
            stats = formats.CorpusStats(load_corpus(paths.manifest),
                read_manifest(paths.manifest))
            output["corpus"] = stats.generate()
            for attr in constants.ATTRIBUTES:
                output["files"].append(self._write("hist_%s.dat" % attr,
                    formats.Columns(["value", "count"], stats.histogram(attr)).generate()))

        if paths.checkpoint:
            self.config.require("checkpoint")
            output["checkpoint"] = formats.CheckpointStats(
                *load_checkpoint(paths.checkpoint)).generate()

        if paths.audit:
            self.config.require("audit")
            output["audit"] = formats.AuditSummary(read_lines(paths.audit)).generate()

        if paths.metrics:
            self.config.require("metrics")
            records = read_lines(paths.metrics)
            curves = sorted({(r.get("run", ""), r["split"], r["metric"]) for r in records})
            for run, split, metric in curves:
                rows = [(r["step"], r["value"]) for r in records
                    if (r.get("run", ""), r["split"], r["metric"]) == (run, split, metric)]
                prefix = "%s_" % run if run else ""
                output["files"].append(self._write(
                    "curve_%s%s_%s.dat" % (prefix, split, metric),
                    formats.Columns(["step", "value"], rows).generate()))

        with open(self.out_path("inspect.json"), "w", encoding="utf-8") as f:
            f.write(json.dumps(output, indent=2, sort_keys=True))
        return output
