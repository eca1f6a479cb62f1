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
from dataclasses import dataclass, field, fields, asdict
from typing import List, Optional

from cpbert.utils import constants
from cpbert.model.encoder import ModelConfig, EncoderError
from cpbert.machinery.corruption import CorruptionConfig, CorruptionError
from cpbert.machinery.tasks import TaskSpec, TaskError
from cpbert.processing.optimizer import OptimizerConfig, TrainingError
from cpbert.processing.pretrain import ScheduleConfig

logger = logging.getLogger(__name__)


@dataclass
class PathsConfig:
    # score files or directories to ingest
    inputs: List[str] = field(default_factory=list)
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    scores: Optional[str] = None
    labels: Optional[str] = None
    split: Optional[str] = None
    metrics: Optional[str] = None
    audit: Optional[str] = None

    def to_dict(self):
        return asdict(self)


SECTIONS = {
    "paths": PathsConfig,
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "corruption": CorruptionConfig,
    "schedule": ScheduleConfig,
}


@dataclass
class RunConfig:
    seed: int
    out: str = "out"
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    task: Optional[TaskSpec] = None

    def to_dict(self):
        return {
            "seed": self.seed,
            "out": self.out,
            "paths": self.paths.to_dict(),
            "model": self.model.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "corruption": self.corruption.to_dict(),
            "schedule": self.schedule.to_dict(),
            "task": self.task.to_dict() if self.task else None,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def require(self, *names):
        """Check that the named paths are set and exist."""
        for name in names:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigError("paths.%s is required" % name)
            for path in value if isinstance(value, list) else [value]:
                if not os.path.exists(path):
                    raise ConfigError("paths.%s does not exist: %s" % (name, path))


def _build(cls, section, values):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError("section '%s' must be an object" % section)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError("unknown key(s) in '%s': %s" % (section, ", ".join(unknown)))
    try:
        return cls(**values)
    except (TypeError, ValueError, EncoderError, CorruptionError, TrainingError, TaskError) as e:
        raise ConfigError("invalid '%s' section: %s" % (section, e)) from e


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = {"seed", "out", "task"} | set(SECTIONS)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError("unknown key(s): %s" % ", ".join(unknown))
    seed = doc.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("'seed' must be given explicitly as an integer")

    sections = {name: _build(cls, name, doc.get(name)) for name, cls in SECTIONS.items()}
    corruption = doc.get("corruption") or {}
    if "seed" not in corruption:
        sections["corruption"].seed = seed

    task = None
    if doc.get("task") is not None:
        task_doc = doc["task"]
        if isinstance(task_doc, str):
            task_doc = {"name": task_doc}
        task_doc = dict(task_doc)
        task_doc.setdefault("seed", seed)
        task = _build(TaskSpec, "task", task_doc)

    config = RunConfig(seed=seed, out=doc.get("out", "out"), task=task, **sections)
    _check_lengths(config)
    return config


def _check_lengths(config):
    if config.schedule.max_len > config.model.max_len:
        raise ConfigError("schedule.max_len %d exceeds model.max_len %d"
            % (config.schedule.max_len, config.model.max_len))


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError("config file not found: %s" % path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.loads(f.read())
        except ValueError as e:
            raise ConfigError("invalid JSON in %s: %s" % (path, e)) from e
    return config_from_dict(doc)


def parse_ranges(text):
    """'4,12,12' -> (4, 12, 12); 'inf' in a slot means unbounded."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError("--ranges expects pos,pit,dur")
    out = []
    for p in parts:
        if p.lower() in ("inf", "none"):
            out.append(None)
            continue
        try:
            value = int(p)
        except ValueError as e:
            raise ConfigError("invalid range value: %s" % p) from e
        if value < 0:
            raise ConfigError("ranges must be non-negative")
        out.append(value)
    return tuple(out)


def apply_overrides(config, seed=None, out=None, max_seq_len=None, mode=None, ranges=None):
    if seed is not None:
        config.seed = seed
        config.corruption.seed = seed
        if config.task is not None:
            config.task.seed = seed
    if out is not None:
        config.out = out
    if max_seq_len is not None:
        if max_seq_len < 1:
            raise ConfigError("--max-seq-len must be >= 1")
        config.schedule.max_len = max_seq_len
        config.model.max_len = max(config.model.max_len, max_seq_len)
    if mode is not None:
        if mode not in constants.CORRUPTION_MODES:
            raise ConfigError("unknown mode: %s" % mode)
        config.corruption.mode = mode
    if ranges is not None:
        r_pos, r_pit, r_dur = parse_ranges(ranges) if isinstance(ranges, str) else ranges
        config.corruption.r_pos = r_pos
        config.corruption.r_pit = r_pit
        config.corruption.r_dur = r_dur
    _check_lengths(config)
    return config


def write_resolved(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, constants.RESOLVED_CONFIG)
    text = config.to_json()
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info("Resolved configuration:\n%s", text)
    return path


class ConfigError(Exception):
    pass
