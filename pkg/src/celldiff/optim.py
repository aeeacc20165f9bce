"""AdamW with decoupled weight decay and optional linear warmup."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Standard Adam moments with bias correction; weight decay is applied
    directly to the parameter (decoupled from the adaptive update).
    With weight_decay=0 this is exactly Adam.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, warmup_steps=0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.warmup_steps = int(warmup_steps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self):
        if self.warmup_steps > 0 and self.step_count < self.warmup_steps:
            return self.lr * (self.step_count + 1) / self.warmup_steps
        return self.lr

    def step(self):
        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay != 0.0:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        """Optimizer state as named arrays, for checkpointing."""
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"opt.m.{p.name}"] = m
            out[f"opt.v.{p.name}"] = v
        return out

    def load_state_arrays(self, arrays, step_count):
        for i, p in enumerate(self.params):
            self.m[i] = np.array(arrays[f"opt.m.{p.name}"], dtype=np.float64)
            self.v[i] = np.array(arrays[f"opt.v.{p.name}"], dtype=np.float64)
        self.step_count = int(step_count)
