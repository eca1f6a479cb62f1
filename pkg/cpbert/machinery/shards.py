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
import struct
import hashlib
import logging

import numpy as np

from cpbert import utils
from cpbert.utils import constants
from cpbert.machinery.tokens import CPToken

logger = logging.getLogger(__name__)

RECORD_DTYPE = np.dtype("<u2")
RECORD_WIDTH = 5  # b, pos, pit, dur, bar_index
LENGTH_PREFIX = struct.Struct("<I")


def encode_piece(tokens):
    """One length-prefixed record: uint32 token count, then uint16 rows."""
    rows = np.array([tuple(t) + (m,) for t, m in tokens], dtype=np.int64)\
        .reshape(len(tokens), RECORD_WIDTH)
    if rows.size and (rows.min() < 0 or rows.max() > 0xFFFF):
        raise ShardError("token value does not fit an unsigned 16-bit field")
    return LENGTH_PREFIX.pack(len(tokens)) + rows.astype(RECORD_DTYPE).tobytes()


def write_shard(path, pieces):
    with open(path, "wb") as f:
        for tokens in pieces:
            f.write(encode_piece(tokens))


def read_shard(path):
    with open(path, "rb") as f:
        data = f.read()

    pieces = []
    offset = 0
    while offset < len(data):
        if offset + LENGTH_PREFIX.size > len(data):
            raise ShardError("%s: truncated length prefix at byte %d" % (path, offset))
        (count,) = LENGTH_PREFIX.unpack_from(data, offset)
        offset += LENGTH_PREFIX.size
        if count == 0:
            pieces.append([])
            continue
        size = count * RECORD_WIDTH * RECORD_DTYPE.itemsize
        if offset + size > len(data):
            raise ShardError("%s: truncated record at byte %d" % (path, offset))
        rows = np.frombuffer(data, dtype=RECORD_DTYPE, count=count * RECORD_WIDTH,
            offset=offset).reshape(count, RECORD_WIDTH)
        pieces.append([(CPToken(*map(int, row[:4])), int(row[4])) for row in rows])
        offset += size
    return pieces


def corpus_checksum(shard_paths):
    digest = hashlib.sha256()
    for path in shard_paths:
        utils.sha256_file(path, digest)
    return digest.hexdigest()


def write_manifest(out_dir, entries, shard_names):
    manifest = {
        "shards": list(shard_names),
        "pieces": entries,
        "n_pieces": len(entries),
        "n_notes": sum(e["n_notes"] for e in entries),
        "checksum": corpus_checksum([os.path.join(out_dir, s) for s in shard_names]),
    }
    path = os.path.join(out_dir, constants.MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, constants.MANIFEST_NAME)
    if not os.path.exists(path):
        raise ShardError("Manifest not found: %s" % path)
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.loads(f.read())
    for key in ("shards", "pieces"):
        if key not in manifest:
            raise ShardError("Manifest %s lacks '%s'" % (path, key))
    manifest["root"] = os.path.dirname(os.path.abspath(path))
    return manifest


def load_corpus(manifest_path):
    """Returns [(piece_id, tokens)] in manifest order."""
    manifest = read_manifest(manifest_path)
    root = manifest["root"]
    by_shard = {}
    for name in manifest["shards"]:
        shard_path = os.path.join(root, name)
        if not os.path.exists(shard_path):
            raise ShardError("Missing shard: %s" % shard_path)
        by_shard[name] = read_shard(shard_path)

    corpus = []
    for entry in manifest["pieces"]:
        tokens = by_shard[entry["shard"]][entry["index"]]
        if len(tokens) != entry["n_notes"]:
            raise ShardError("Piece %s: manifest says %d notes, shard holds %d"
                % (entry["piece_id"], entry["n_notes"], len(tokens)))
        corpus.append((entry["piece_id"], tokens))
    return corpus


class ShardError(Exception):
    pass
