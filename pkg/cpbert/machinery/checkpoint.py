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
import json
import struct
import logging

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"CPBCKPT\0"
VERSION = 1
PREAMBLE = struct.Struct("<8sHI")
TENSOR_DTYPE = np.dtype("<f4")


def _as_array(value):
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.ascontiguousarray(np.asarray(value), dtype=TENSOR_DTYPE)


def encode_checkpoint(tensors, config, meta):
    """Container bytes: magic, version, header length, JSON header, raw tensors.

    Tensors are stored row-major as little-endian float32, in sorted name order."""
    index = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        array = _as_array(tensors[name])
        blob = array.tobytes(order="C")
        index.append({"name": name, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({"config": config, "meta": meta, "tensors": index},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def decode_checkpoint(data):
    if len(data) < PREAMBLE.size:
        raise CheckpointError("checkpoint too short")
    magic, version, header_len = PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    start = PREAMBLE.size + header_len
    if start > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[PREAMBLE.size:start].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError("corrupt checkpoint header: %s" % e) from e

    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CheckpointError("truncated tensor %s" % entry["name"])
        tensors[entry["name"]] = np.frombuffer(data[lo:hi], dtype=TENSOR_DTYPE)\
            .reshape(entry["shape"]).copy()
    return tensors, header["config"], header["meta"]


def save_checkpoint(path, tensors, config, meta):
    data = encode_checkpoint(tensors, config, meta)
    with open(path, "wb") as f:
        f.write(data)
    logger.info("Wrote checkpoint %s (%d tensors, %d bytes)", path, len(tensors), len(data))
    return data


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError("cannot read checkpoint %s: %s" % (path, e)) from e
    return decode_checkpoint(data)


class CheckpointError(Exception):
    pass
