import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_encoder_config
from tslm.datagen import CaptionedPair, make_synth_dataset
from tslm.denoiser import (
    DenoiserModel,
    filter_pairs,
    in_batch_loss,
    retrieval_accuracy,
    roc_auc,
    score_pairs,
    score_stats,
    train_denoiser,
)
from tslm.errors import ContractError, ParameterError
from tslm.tensor import Tensor, float64


@pytest.fixture
def model(vocab, tiny_ae):
    return DenoiserModel(vocab, tiny_encoder_config(vocab), tiny_ae)


def scored(values):
    s = (10.0, 20.0, 30.0)
    return [CaptionedPair(s, "increases at the end", "generated", v) for v in values]


def test_uniform_rows_give_log_b():
    with float64():
        assert in_batch_loss(Tensor(np.full((8, 8), 0.3))).item() == pytest.approx(2.0794, abs=1e-4)
        assert in_batch_loss(Tensor(np.eye(8) * 1e3)).item() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_row_loss_non_negative(b, seed):
    sim = np.random.default_rng(seed).normal(0, 3, size=(b, b))
    with float64():
        assert in_batch_loss(Tensor(sim)).item() >= 0.0
        assert in_batch_loss(Tensor(np.zeros((b, b)))).item() == pytest.approx(math.log(b))


def test_caption_vector_contract(model):
    v = model.encode_caption("increases in the middle")
    assert v.shape == (16,)
    assert v.tobytes() == model.encode_caption("increases in the middle").tobytes()
    with pytest.raises(ParameterError):
        model.encode_caption("  ")


def test_similarity_is_a_dot_product(model):
    s = make_synth_dataset(1, 0)[0].series
    c = "decreases at the start"
    assert model.similarity(s, c) == pytest.approx(float(np.dot(model.encode_series(s), model.encode_caption(c))), rel=1e-6)
    batch = model.score_batch([s], [c])
    assert batch[0] == pytest.approx(model.similarity(s, c), rel=1e-5)


def test_score_pairs_preserves_order_and_is_idempotent(model):
    pairs = make_synth_dataset(4, 1, annotations=2)
    a = score_pairs(pairs, model)
    b = score_pairs(a, model)
    assert [p.caption for p in a] == [p.caption for p in pairs]
    assert [p.score for p in a] == [p.score for p in b]


def test_filter_example():
    kept, removed, _ = filter_pairs(scored([2.5, -0.3, 0.0]), 0.0)
    assert [p.score for p in kept] == [2.5, 0.0]
    assert [p.score for p in removed] == [-0.3]
    kept, removed, _ = filter_pairs(scored([2.5, -0.3, 0.0]), -1.0)
    assert len(removed) == 0
    with pytest.raises(ContractError):
        filter_pairs([CaptionedPair((1.0, 2.0, 3.0), "x")], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30), st.floats(-10, 10))
def test_filter_partitions(values, th):
    kept, removed, _ = filter_pairs(scored(values), th)
    assert len(kept) + len(removed) == len(values)
    assert all(p.score >= th for p in kept) and all(p.score < th for p in removed)


def test_score_stats_examples():
    st_ = score_stats([0.0, 2.0])
    assert st_.mean == 1.0 and st_.std == pytest.approx(math.sqrt(2))
    flat = score_stats([1.5, 1.5, 1.5])
    assert flat.std == 0.0 and flat.suggested_interval == (1.5, 1.5)
    with pytest.raises(ParameterError):
        score_stats([1.0])


def test_roc_auc_and_retrieval_accuracy():
    assert roc_auc([3, 2, 1, 0], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0, 1, 2, 3], [1, 1, 0, 0]) == 0.0
    assert roc_auc([1, 1], [1, 0]) == 0.5
    sim = np.array([[2.0, 1.0], [3.0, 0.0]])
    assert retrieval_accuracy(sim) == 0.5
    assert retrieval_accuracy(sim, np.array([[True, False], [True, True]])) == 1.0


def test_paths_share_parameters_after_training(vocab, tiny_ae):
    pairs = make_synth_dataset(8, 0, annotations=1)
    model, log = train_denoiser(pairs, vocab, tiny_ae, tiny_encoder_config(vocab), batch=4, epochs=2, lr=1e-3)
    table = model.encoder.token_embedding
    assert sum(p is table for p in model.parameters()) == 1
    # the caption path reads the same tensor the series path was trained through
    ids = model.caption_ids("increases at the end")
    np.testing.assert_array_equal(model.encoder.embed_tokens(ids).data, model.encoder.embedding_table().data[ids])
    assert len(log.losses) == 2


def test_training_needs_a_full_batch(vocab, tiny_ae):
    with pytest.raises(ParameterError):
        train_denoiser(make_synth_dataset(2, 0, annotations=1), vocab, tiny_ae, batch=8)
