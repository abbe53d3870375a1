"""
Verbose scripts route to wider experts
======================================

Train a small model between a 1-byte and a 3-byte synthetic script and
compare the average contextualization radius chosen for each source.
Takes a few minutes on one CPU core.
"""

import numpy as np

from moce.analysis import avg_delta, js_divergence, record_expert_ratios
from moce.model import ModelConfig, build_model
from moce.synthetic import SyntheticLangSpec, make_synthetic_corpus
from moce.tokenizer import build_vocab
from moce.training import TrainConfig, encode_corpus, evaluate_accuracy, train

specs = [SyntheticLangSpec("en", 16, 1), SyntheticLangSpec("xx", 16, 3, seed=1)]
corpus = make_synthetic_corpus(specs, n_per_pair=1000, length_range=(3, 8), seed=0)
train_set, held_out = corpus.split(200)
print(train_set.records[0])

model = build_model(ModelConfig(max_delta=5, use_lid=True, dropout=0.0), build_vocab(corpus.languages()))
config = TrainConfig(lr=1e-3, warmup=200, dropout=0.0, batch_tokens=1000, max_steps=1000,
                     valid_interval=250, patience=100)
result = train(model, train_set, config, held_out)
for entry in result.log:
    print(entry.line())
print("held-out token accuracy: %.4f" % evaluate_accuracy(model, encode_corpus(held_out, model.vocab)))

wide = record_expert_ratios(model, held_out, ("xx", "en"))
narrow = record_expert_ratios(model, held_out, ("en", "xx"))
print("xx->en ratios", np.round(wide.ratios(), 3), "avg delta %.2f" % avg_delta(wide))
print("en->xx ratios", np.round(narrow.ratios(), 3), "avg delta %.2f" % avg_delta(narrow))
print("JS divergence between directions: %.4f nats" % js_divergence(wide.ratios(), narrow.ratios()))
