"""Sparsely gated contrastive mixture-of-experts CNN."""
from .gate import GateDecision, combine, gate_noise, noisy_topk, noisy_topk_gate
from .model import (
    ConvBlock,
    Expert,
    ForwardBatch,
    ForwardOutput,
    GateBranch,
    MoeConfig,
    MoeModel,
    ProjectionHead,
    parameter_count,
)
from .checkpoint import load_checkpoint, save_checkpoint
