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
import math
import hashlib
from fractions import Fraction

def to_fraction(value):
    """Exact rational for ints, Fractions and decimal literals.

    Floats go through their shortest repr so 0.1 becomes 1/10, not the
    binary expansion."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a time value")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite time value")
        return Fraction(repr(value))
    return Fraction(value)

def round_half_up(value):
    return math.floor(to_fraction(value) + Fraction(1, 2))

def clamp(value, low, high):
    return max(low, min(high, value))

def shift_octaves(pitch, low, high):
    while pitch < low:
        pitch += 12
    while pitch > high:
        pitch -= 12
    return pitch

def derive_seed(*parts):
    """64-bit seed derived from a tuple of integers, stable across runs."""
    digest = hashlib.sha256(
        ".".join(str(int(p)) for p in parts).encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")

def sha256_file(path, digest=None):
    digest = digest or hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest
