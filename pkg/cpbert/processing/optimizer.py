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
import logging
from dataclasses import dataclass, asdict
from typing import Tuple

import torch

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 2e-5
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_update: bool = True
    clip_threshold: float = 1.0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.lr < 0:
            raise TrainingError("learning rate must be non-negative")
        if self.weight_decay < 0:
            raise TrainingError("weight decay must be non-negative")
        if len(self.betas) != 2 or not all(0 < b < 1 for b in self.betas):
            raise TrainingError("betas must lie in (0, 1)")
        if self.eps <= 0 or self.clip_threshold <= 0:
            raise TrainingError("eps and clip_threshold must be positive")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def update_rms(grad, v_hat, eps):
    """Root-mean-square of g^2 / max(v_hat, eps^2) over one tensor."""
    if grad.numel() == 0:
        return 0.0
    ratio = grad.pow(2) / torch.clamp(v_hat, min=eps * eps)
    return math.sqrt(ratio.mean().item())


def stable_adamw_step(params, grads, states, config):
    """One StableAdamW update, in place.

    AdamW with bias correction and decoupled weight decay; with update
    clipping on, each tensor's learning rate is divided by
    max(1, RMS / clip_threshold). Raises before touching anything when a
    gradient is non-finite."""
    for idx, grad in enumerate(grads):
        if grad is not None and not bool(torch.isfinite(grad).all()):
            raise TrainingError("non-finite gradient for parameter %d; step aborted" % idx)

    beta1, beta2 = config.betas
    for param, grad, state in zip(params, grads, states):
        if grad is None:
            continue
        if not state:
            state["step"] = 0
            state["exp_avg"] = torch.zeros_like(param)
            state["exp_avg_sq"] = torch.zeros_like(param)

        state["step"] += 1
        step = state["step"]
        exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
        exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
        exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

        m_hat = exp_avg / (1 - beta1 ** step)
        v_hat = exp_avg_sq / (1 - beta2 ** step)

        lr = config.lr
        if config.clip_update:
            lr = lr / max(1.0, update_rms(grad, v_hat, config.eps) / config.clip_threshold)

        param.mul_(1 - lr * config.weight_decay)
        param.add_(m_hat / (v_hat.sqrt() + config.eps), alpha=-lr)


class StableAdamW(torch.optim.Optimizer):
    def __init__(self, params, config=None):
        self.config = config or OptimizerConfig()
        defaults = {"lr": self.config.lr}
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        params, grads, states = [], [], []
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                params.append(p)
                grads.append(p.grad)
                states.append(self.state[p])
        stable_adamw_step(params, grads, states, self.config)
        return loss

    def named_moments(self, named_params):
        """{'<name>/exp_avg': tensor, ...} for checkpointing."""
        out = {}
        for name, p in named_params:
            state = self.state.get(p)
            if not state:
                continue
            out[name + "/exp_avg"] = state["exp_avg"]
            out[name + "/exp_avg_sq"] = state["exp_avg_sq"]
        return out

    def step_counts(self, named_params):
        return {name: self.state[p]["step"] for name, p in named_params
            if self.state.get(p)}


class TrainingError(Exception):
    pass


class DivergenceError(TrainingError):
    pass
