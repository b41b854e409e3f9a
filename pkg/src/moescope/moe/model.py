"""Sparse contrastive MoE-CNN: shared prefix, two-branch noisy gate, experts, projection head."""
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError
from ..ndtensor import (
    BatchNormState,
    Tensor,
    add,
    as_param,
    batchnorm,
    conv2d,
    gap,
    gather,
    l2norm,
    linear,
    no_grad,
    relu,
    scale_rows,
    scatter_rows,
    take_rows,
)
from .gate import GateDecision, gate_noise, noisy_topk


@dataclass
class MoeConfig:
    num_experts: int = 4
    top_k: int = 2
    base_width: int = 64
    input_size: int = 32
    shared_widths: tuple = (16, 32)
    shared_blocks: int = 3
    expert_blocks: int = 2
    expert_expansion: int = 2
    gate_width: int = 16
    proj_dim: int = 128
    noise_enabled: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.shared_widths = tuple(int(w) for w in self.shared_widths)
        if not 1 <= self.top_k <= self.num_experts:
            raise ConfigError(f"need 1 <= top_k <= num_experts, got k={self.top_k}, E={self.num_experts}")
        if self.shared_blocks != 3 or self.expert_blocks != 2:
            raise ConfigError("only the 3 shared + 2 expert block layout is supported")
        if len(self.shared_widths) != self.shared_blocks - 1:
            raise ConfigError(f"shared_widths lists the first {self.shared_blocks - 1} block widths")
        if self.input_size < 8:
            raise ConfigError(f"input_size {self.input_size} is too small for five stride-2 blocks")
        if self.embed_dim < 1:
            raise ConfigError(f"base_width {self.base_width} leaves no channels for E={self.num_experts}")

    @property
    def embed_dim(self):
        # floor(base / sqrt(E)) computed exactly in integers
        return math.isqrt(self.base_width * self.base_width // self.num_experts)

    @property
    def gate_size(self):
        size = self.input_size
        for _ in range(self.shared_blocks):
            size = (size - 1) // 2 + 1
        return size

    def to_dict(self):
        d = asdict(self)
        d["shared_widths"] = list(self.shared_widths)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def full_scale(cls, num_experts=4, top_k=2):
        return cls(num_experts=num_experts, top_k=top_k, base_width=256, input_size=96)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Module:
    """Named parameter / batch-norm-state container."""

    def parameters(self, prefix=""):
        out = OrderedDict()
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.parameters(prefix + name + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    out.update(m.parameters(f"{prefix}{name}.{i}."))
        return out

    def bn_states(self, prefix=""):
        out = OrderedDict()
        for name, value in vars(self).items():
            if isinstance(value, BatchNormState):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.bn_states(prefix + name + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    out.update(m.bn_states(f"{prefix}{name}.{i}."))
        return out


class ConvBlock(Module):
    """Stride-2 conv -> BN, plus a 3x3 residual conv added before the ReLU."""

    def __init__(self, rng, cin, cout, momentum, eps):
        self.conv = as_param(_he(rng, (cout, cin, 3, 3), cin * 9))
        self.bn_gamma = as_param(np.ones(cout))
        self.bn_beta = as_param(np.zeros(cout))
        self.bn = BatchNormState(cout, momentum, eps)
        self.res_conv = as_param(_he(rng, (cout, cout, 3, 3), cout * 9) * 0.5)
        self.res_bias = as_param(np.zeros(cout))

    def __call__(self, x, training):
        u = batchnorm(conv2d(x, self.conv, None, stride=2, padding=1), self.bn_gamma, self.bn_beta, self.bn, training)
        return relu(add(u, conv2d(u, self.res_conv, self.res_bias, stride=1, padding=1)))


class GateBranch(Module):
    """3x3 conv -> BN -> ReLU -> global average pool -> fully connected to E logits."""

    def __init__(self, rng, channels, width, num_experts, momentum, eps):
        self.conv = as_param(_he(rng, (width, channels, 3, 3), channels * 9))
        self.bn_gamma = as_param(np.ones(width))
        self.bn_beta = as_param(np.zeros(width))
        self.bn = BatchNormState(width, momentum, eps)
        self.fc_weight = as_param(rng.normal(0.0, 0.1 / math.sqrt(width), size=(num_experts, width)))
        self.fc_bias = as_param(np.zeros(num_experts))

    def __call__(self, h, training):
        a = relu(batchnorm(conv2d(h, self.conv, None, stride=1, padding=1), self.bn_gamma, self.bn_beta, self.bn, training))
        return linear(gap(a), self.fc_weight, self.fc_bias)


class Expert(Module):
    """Two stride-2 conv blocks followed by a private three-layer MLP readout."""

    def __init__(self, rng, channels, embed_dim, expansion, momentum, eps):
        wide = channels * expansion
        self.blocks = [
            ConvBlock(rng, channels, channels, momentum, eps),
            ConvBlock(rng, channels, wide, momentum, eps),
        ]
        self.fc1_weight = as_param(_he(rng, (embed_dim, wide), wide))
        self.fc1_bias = as_param(np.zeros(embed_dim))
        self.fc2_weight = as_param(_he(rng, (embed_dim, embed_dim), embed_dim))
        self.fc2_bias = as_param(np.zeros(embed_dim))
        self.fc3_weight = as_param(_he(rng, (embed_dim, embed_dim), embed_dim) * 0.5)
        self.fc3_bias = as_param(np.zeros(embed_dim))

    def __call__(self, h, training):
        if training and h.shape[0] < 2:
            # a lone routed image cannot supply batch statistics
            training = False
            for block in self.blocks:
                block.bn.initialized = True
        x = h
        for block in self.blocks:
            x = block(x, training)
        x = gap(x)
        x = relu(linear(x, self.fc1_weight, self.fc1_bias))
        x = relu(linear(x, self.fc2_weight, self.fc2_bias))
        return linear(x, self.fc3_weight, self.fc3_bias)


class ProjectionHead(Module):
    """Linear -> BN -> ReLU -> Linear, used only by the contrastive loss."""

    def __init__(self, rng, embed_dim, proj_dim, momentum, eps):
        self.fc1_weight = as_param(_he(rng, (embed_dim, embed_dim), embed_dim))
        self.fc1_bias = as_param(np.zeros(embed_dim))
        self.bn_gamma = as_param(np.ones(embed_dim))
        self.bn_beta = as_param(np.zeros(embed_dim))
        self.bn = BatchNormState(embed_dim, momentum, eps)
        self.fc2_weight = as_param(_he(rng, (proj_dim, embed_dim), embed_dim))
        self.fc2_bias = as_param(np.zeros(proj_dim))

    def __call__(self, z, training):
        a = relu(batchnorm(linear(z, self.fc1_weight, self.fc1_bias), self.bn_gamma, self.bn_beta, self.bn, training))
        return linear(a, self.fc2_weight, self.fc2_bias)

    def set_identity(self):
        """Degenerate head whose eval-mode output is the (ReLU'd) leading slice of z."""
        d = self.fc1_weight.shape[0]
        p = self.fc2_weight.shape[0]
        self.fc1_weight.data[...] = np.eye(d)
        self.fc1_bias.data[...] = 0.0
        self.bn_gamma.data[...] = 1.0
        self.bn_beta.data[...] = 0.0
        self.bn.running_mean = np.zeros(d)
        self.bn.running_var = np.full(d, 1.0 - self.bn.eps)
        self.bn.initialized = True
        self.fc2_weight.data[...] = np.eye(p, d)
        self.fc2_bias.data[...] = 0.0


@dataclass
class ForwardOutput:
    """Per-image view of a forward pass."""

    z: np.ndarray
    v: np.ndarray = None
    gate: GateDecision = None
    readouts: np.ndarray = None  # [E, D] when forced
    norms: np.ndarray = None  # [E] when forced


@dataclass
class ForwardBatch:
    z: Tensor
    logits: Tensor
    scores: Tensor
    weights: Tensor
    selected: np.ndarray
    v: Tensor = None
    noise_logits: Tensor = None
    readouts: list = field(default=None)  # per-expert [B,D] arrays when forced
    norms: np.ndarray = None  # [B,E] when forced

    def outputs(self):
        res = []
        for b in range(self.z.shape[0]):
            gd = GateDecision(
                self.logits.data[b].copy(),
                self.scores.data[b].copy(),
                self.selected[b].copy(),
                self.weights.data[b].copy(),
            )
            res.append(
                ForwardOutput(
                    z=self.z.data[b].copy(),
                    v=None if self.v is None else self.v.data[b].copy(),
                    gate=gd,
                    readouts=None if self.readouts is None else np.stack([r[b] for r in self.readouts]),
                    norms=None if self.norms is None else self.norms[b].copy(),
                )
            )
        return res


class MoeModel(Module):
    def __init__(self, config, seed=0):
        self.config = config
        c = config
        rng = np.random.default_rng(seed)
        m, eps = c.bn_momentum, c.bn_eps
        widths = (3,) + c.shared_widths + (c.embed_dim,)
        self.shared = [ConvBlock(rng, widths[i], widths[i + 1], m, eps) for i in range(c.shared_blocks)]
        self.gate_clean = GateBranch(rng, c.embed_dim, c.gate_width, c.num_experts, m, eps)
        self.gate_noise = GateBranch(rng, c.embed_dim, c.gate_width, c.num_experts, m, eps)
        self.experts = [Expert(rng, c.embed_dim, c.embed_dim, c.expert_expansion, m, eps) for _ in range(c.num_experts)]
        self.proj = ProjectionHead(rng, c.embed_dim, c.proj_dim, m, eps)

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def shared_features(self, x, training):
        h = x
        for block in self.shared:
            h = block(h, training)
        return h

    def expert_forward(self, h, expert_index, training=False):
        """Readouts z_i of one expert for a batch of gating-point features."""
        if not 0 <= expert_index < self.config.num_experts:
            raise ContractError(f"expert index {expert_index} out of range for E={self.config.num_experts}")
        return self.experts[expert_index](h, training)

    def forward(self, images, mode="eval", force_all_experts=False, noise_key=(0, 0)):
        """Run a batch of NCHW images through the network.

        ``mode="train"`` uses batch statistics, noisy gating (when enabled) and
        the projection head; ``mode="eval"`` is a pure function of the images.
        ``force_all_experts`` pushes every image through every expert and
        records their readouts and norms; the combined embedding still uses
        only the gate-selected experts.
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        c = self.config
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[0] == 0:
            raise DimensionError(f"expected a non-empty [B,3,S,S] batch, got {x.shape}")
        if x.shape[1:] != (3, c.input_size, c.input_size):
            raise DimensionError(
                f"images of shape {x.shape[1:]} do not match configured input (3, {c.input_size}, {c.input_size})"
            )
        training = mode == "train"
        B = x.shape[0]
        h = self.shared_features(x, training)
        if h.shape[2:] != (c.gate_size, c.gate_size):
            raise DimensionError(f"gating feature map {h.shape[2:]} vs expected {c.gate_size}x{c.gate_size}")

        logits = self.gate_clean(h, training)
        noise_logits = None
        noise = None
        if training and c.noise_enabled:
            noise_logits = self.gate_noise(h, training)
            noise = gate_noise(noise_key[0], noise_key[1], B, c.num_experts)
        scores, weights, selected = noisy_topk(logits, noise_logits, c.top_k, noise)

        forced = None
        norms = None
        if force_all_experts:
            forced = [self.experts[e](h, training) for e in range(c.num_experts)]
            norms = np.stack([l2norm(r).data for r in forced], axis=1)

        z = None
        for e in range(c.num_experts):
            rows = np.flatnonzero((selected == e).any(axis=1))
            if rows.size == 0:
                continue
            if forced is not None:
                z_e = take_rows(forced[e], rows)
            else:
                z_e = self.experts[e](take_rows(h, rows), training)
            w = gather(weights, rows, np.full(rows.size, e))
            term = scatter_rows(scale_rows(z_e, w), rows, B)
            z = term if z is None else add(z, term)

        v = self.proj(z, True) if training else None
        return ForwardBatch(
            z=z,
            logits=logits,
            scores=scores,
            weights=weights,
            selected=selected,
            v=v,
            noise_logits=noise_logits,
            readouts=None if forced is None else [r.data for r in forced],
            norms=norms,
        )

    def route(self, images, mode="eval", noise_key=(0, 0)):
        """Gate only: ``(clean_logits, selected, weights)`` as arrays, no experts run."""
        c = self.config
        training = mode == "train"
        with no_grad():
            h = self.shared_features(images if isinstance(images, Tensor) else Tensor(images), training)
            logits = self.gate_clean(h, training)
            noise_logits = noise = None
            if training and c.noise_enabled:
                noise_logits = self.gate_noise(h, training)
                noise = gate_noise(noise_key[0], noise_key[1], h.shape[0], c.num_experts)
            _, weights, selected = noisy_topk(logits, noise_logits, c.top_k, noise)
        return logits.data, selected, weights.data

    def warmup_statistics(self, images):
        """Seed every batch-norm layer (all experts included) from one forced train-mode pass."""
        with no_grad():
            self.forward(images, mode="train", force_all_experts=True)


def parameter_count(config, seed=0):
    return MoeModel(config, seed).parameter_count()
