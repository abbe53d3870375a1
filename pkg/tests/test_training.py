import numpy as np
import pytest

from moce.model import ModelConfig, build_model
from moce.synthetic import SyntheticLangSpec, make_synthetic_corpus
from moce.tokenizer import build_vocab
from moce.training import TrainConfig, encode_corpus, make_batches, train

SMALL = dict(d_model=16, heads=2, ffn=32, max_delta=2, use_lid=True)


@pytest.fixture(scope="module")
def corpus():
    specs = [SyntheticLangSpec("en", 8, 1), SyntheticLangSpec("xx", 8, 2, seed=1)]
    return make_synthetic_corpus(specs, n_per_pair=40, length_range=(2, 5), seed=0)


def fresh(corpus, **kw):
    return build_model(ModelConfig(**{**SMALL, **kw}), build_vocab(corpus.languages()))


def test_batches_cover_every_pair_once_within_budget(corpus):
    pairs = encode_corpus(corpus, build_vocab(corpus.languages()))
    batches = make_batches(pairs, 120, np.random.default_rng(0))
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(len(pairs)))
    for b in batches:
        longest = max(max(len(pairs[i][0]), len(pairs[i][1])) for i in b)
        assert len(b) == 1 or longest * len(b) <= 120


def test_zero_learning_rate_changes_nothing(corpus):
    m = fresh(corpus)
    before = {n: p.data.copy() for n, p in m.params.items()}
    train(m, corpus, TrainConfig(lr=0.0, max_steps=3, batch_tokens=200, warmup=1))
    for n, p in m.params.items():
        np.testing.assert_array_equal(p.data, before[n])


def test_training_is_deterministic(corpus):
    cfg = TrainConfig(lr=1e-3, max_steps=4, batch_tokens=200, warmup=2, seed=3)
    a = train(fresh(corpus), corpus, cfg).step_losses
    b = train(fresh(corpus), corpus, cfg).step_losses
    assert a == b


def test_early_stopping_counts_validations(corpus, tmp_path):
    cfg = TrainConfig(lr=0.0, max_steps=1000, batch_tokens=200, valid_interval=2, patience=3,
                      checkpoint_interval=4)
    res = train(fresh(corpus), corpus, cfg, valid=corpus, out_dir=tmp_path)
    assert res.stopped_early
    assert res.steps == 2 * (1 + 3)
    lines = (tmp_path / "loss.log").read_text().splitlines()
    assert len(lines) == 4
    step, tr, va = lines[0].split("\t")
    assert int(step) == 2 and float(tr) > 0 and float(va) > 0
    assert [p.name for p in res.checkpoints] == ["checkpoint_4.moce", "checkpoint_8.moce"]


def test_loss_decreases(corpus):
    cfg = TrainConfig(lr=3e-3, max_steps=60, batch_tokens=300, warmup=10, dropout=0.0)
    losses = train(fresh(corpus), corpus, cfg).step_losses
    assert np.mean(losses[-10:]) < np.mean(losses[:10]) - 0.5


def test_non_finite_loss_is_reported(corpus):
    m = fresh(corpus)
    m.params["embed"].data[:] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite loss"):
        train(m, corpus, TrainConfig(max_steps=2, batch_tokens=200))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(lr=-1).validate()
