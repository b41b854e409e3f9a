"""Corpora, augmentation, optimisation and the training loop."""
from .augment import AugmentConfig, augment, augment_batch, augment_pair, normalize
from .corpus import (
    Corpus,
    attach_dimension_table,
    load_corpus,
    load_dimension_table,
    save_corpus,
    synth_corpus,
)
from .optim import Adam, clip_grad_norm, cosine_lr, global_norm
from .splits import holdout_split, kfold_split, stratified_kfold_split
from .train import TrainConfig, TrainResult, routing_share, train, validation_metrics
