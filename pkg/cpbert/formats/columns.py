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
import io

import numpy as np

from .base import BaseFormatter


class Columns(BaseFormatter):
    """Whitespace-separated plot data with a commented header line."""

    def __init__(self, header, rows, fmt="%.10g"):
        self.header = list(header)
        self.rows = rows
        self.fmt = fmt

    def generate(self):
        data = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(self.header))
        buf = io.StringIO()
        np.savetxt(buf, data, fmt=self.fmt, header=" ".join(self.header))
        return buf.getvalue()
