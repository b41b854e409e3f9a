"""Adam with L2 weight decay, cosine learning-rate annealing and global-norm clipping."""
import math

import numpy as np


def cosine_lr(step, total_steps, lr, min_lr):
    """lr at ``step`` of a cosine anneal from ``lr`` (step 0) to ``min_lr`` (step ``total_steps``)."""
    if total_steps <= 0:
        return lr
    t = min(max(step, 0), total_steps) / total_steps
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + math.cos(math.pi * t))


def global_norm(grads):
    return math.sqrt(sum(float((g * g).sum()) for g in grads))


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params  # name -> Tensor
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_tensors(self):
        out = {"optim.t": np.array([float(self.t)])}
        for k in self.params:
            out[f"optim.m.{k}"] = self.m[k]
            out[f"optim.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, tensors):
        self.t = int(tensors["optim.t"][0])
        for k in self.params:
            self.m[k] = np.array(tensors[f"optim.m.{k}"])
            self.v[k] = np.array(tensors[f"optim.v.{k}"])
