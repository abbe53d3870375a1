"""Byte-level multilingual translation with a routed mixture of contextualization experts."""

from .model import Model, ModelConfig, build_model, forward_loss
from .tokenizer import EOS_ID, PAD_ID, TokenSeq, Vocab, build_vocab, decode, encode
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["Model", "ModelConfig", "build_model", "forward_loss", "TrainConfig", "train",
           "Vocab", "TokenSeq", "build_vocab", "encode", "decode", "PAD_ID", "EOS_ID"]
