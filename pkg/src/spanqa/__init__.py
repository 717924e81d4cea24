"""Extractive question answering: BiLSTM encoder, bidirectional attention,
a start decoder and a conditioning end decoder, trained on a built-in
reverse-mode autodiff core, with smart-span decoding and F1/EM evaluation."""

__version__ = "0.1.0"

from . import (autodiff, checkpoint, data, diagnostics, metrics, model, spans,
               training)

__all__ = ["autodiff", "checkpoint", "data", "diagnostics", "metrics", "model",
           "spans", "training", "__version__"]
