"""Desk-scale sparse pre-training with a numpy MLP language model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import BatchSampler, Corpus
from .model import (PRUNABLE, TinyLM, TinyLMSpec, eval_loss, global_magnitude_prune,
                    hidden_for_params, train_step)
from .run import (BATCH_GRID, LR_GRID, TrainConfig, TrainResult, make_train_config,
                  matched_dense_config, run_matched_pair, run_sparse_pretraining)

__all__ = [
    "BATCH_GRID", "BatchSampler", "Corpus", "LR_GRID", "PRUNABLE", "TinyLM", "TinyLMSpec",
    "TrainConfig", "TrainResult", "eval_loss", "global_magnitude_prune", "hidden_for_params",
    "load_checkpoint", "make_train_config", "matched_dense_config", "run_matched_pair",
    "run_sparse_pretraining", "save_checkpoint", "train_step",
]
