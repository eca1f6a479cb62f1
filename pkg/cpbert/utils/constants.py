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
BEATS_UNIT      = "beats"
SECONDS_UNIT    = "seconds"
TIME_UNITS      = (BEATS_UNIT, SECONDS_UNIT)

# normalized bar: 4 crotchets, 16 tatums
BAR_CROTCHETS   = 4
TATUMS_PER_BAR  = 16
TATUMS_PER_BEAT = 4
DUR_PER_BEAT    = 8
DUR_PER_TATUM   = 2

# attribute order inside a CP token
ATTRIBUTES      = ("b", "pos", "pit", "dur")
ATTR_LOW        = {"b": 0, "pos": 0, "pit": 22, "dur": 1}
ATTR_HIGH       = {"b": 1, "pos": 15, "pit": 107, "dur": 64}

N_PITCHES       = ATTR_HIGH["pit"] - ATTR_LOW["pit"] + 1
N_CHROMA        = 12

DEFAULT_MAX_LEN = 1024

RC_MODE         = "rc"
RC_INF_MODE     = "rc-inf"
MLM_MODE        = "mlm"
CORRUPTION_MODES = (RC_MODE, RC_INF_MODE, MLM_MODE)

NOTE_LEVEL      = "note"
SEQUENCE_LEVEL  = "sequence"
TATUM_LEVEL     = "tatum"

ACCURACY_METRIC = "accuracy"
F1_METRIC       = "f1"
CSR_METRIC      = "csr"

TRAIN_SPLIT     = "train"
VALID_SPLIT     = "valid"
TEST_SPLIT      = "test"

INGEST_OP       = "ingest"
PRETRAIN_OP     = "pretrain"
FINETUNE_OP     = "finetune"
EVAL_OP         = "eval"
INSPECT_OP      = "inspect"

LOG_LEVEL_ENV   = "CPBERT_LOG_LEVEL"
LOG_FORMAT      = '%(levelname)-8s %(asctime)s [%(filename)s:%(lineno)d] %(message)s'
LOG_DATEFMT     = '%Y-%m-%d:%H:%M:%S'

MANIFEST_NAME   = "manifest.json"
SHARD_NAME      = "shard-{:05d}.bin"
CHECKPOINT_NAME = "best.ckpt"
METRICS_NAME    = "metrics.jsonl"
RESOLVED_CONFIG = "resolved_config.json"
REPORT_NAME     = "report.json"

PIECES_PER_SHARD = 1000
SCORE_EXTENSIONS = (".mid", ".midi", ".json")
