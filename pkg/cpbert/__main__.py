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
import sys
import json
import logging
import argparse

from cpbert.cpbert import CPBertRun, configure_logging
from cpbert.config import ConfigError, load_config, config_from_dict, apply_overrides
from cpbert.utils.constants import INGEST_OP, PRETRAIN_OP, FINETUNE_OP, EVAL_OP, INSPECT_OP, \
    CORRUPTION_MODES
from cpbert.machinery.scores import ScoreError
from cpbert.machinery.tokens import TokenizerError
from cpbert.machinery.shards import ShardError
from cpbert.machinery.corruption import CorruptionError
from cpbert.machinery.checkpoint import CheckpointError
from cpbert.machinery.tasks import TaskError
from cpbert.machinery.metrics import MetricError
from cpbert.model.encoder import EncoderError
from cpbert.processing.optimizer import TrainingError

logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (ConfigError, ScoreError, TokenizerError, ShardError, CorruptionError,
    CheckpointError, TaskError, MetricError, EncoderError, TrainingError)


def build_parser():
    parser = argparse.ArgumentParser(prog="cpbert")
    parser.add_argument(
        "operation",
        choices=[INGEST_OP, PRETRAIN_OP, FINETUNE_OP, EVAL_OP, INSPECT_OP],
        help="Pipeline stage to run"
    )
    parser.add_argument(
        "inputs",
        nargs="*",
        help="Score files or directories (ingest only)"
    )
    parser.add_argument(
        "--config",
        help="JSON run configuration",
        default=None
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Override the configured seed",
        default=None
    )
    parser.add_argument(
        "--out",
        help="Output directory",
        default=None
    )
    parser.add_argument(
        "--max-seq-len",
        type=int,
        help="Segment length, e.g. 512, 1024 or 2048",
        default=None
    )
    parser.add_argument(
        "--mode",
        choices=list(CORRUPTION_MODES),
        help="Token corruption objective",
        default=None
    )
    parser.add_argument(
        "--ranges",
        help="Corruption ranges as pos,pit,dur ('inf' for unbounded)",
        default=None
    )
    return parser


def resolve_config(args):
    if args.config:
        config = load_config(args.config)
    elif args.seed is not None:
        config = config_from_dict({"seed": args.seed})
    else:
        raise ConfigError("either --config or --seed is required")
    if args.inputs:
        config.paths.inputs = list(args.inputs)
    return apply_overrides(config, seed=args.seed, out=args.out,
        max_seq_len=args.max_seq_len, mode=args.mode, ranges=args.ranges)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = resolve_config(args)
        run = CPBertRun(config, args.operation)
        run.run()
    except DOMAIN_ERRORS as e:
        logger.error("%s failed: %s", args.operation, e)
        return 1
    print(json.dumps(run.output(), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
