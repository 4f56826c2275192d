import math

import numpy as np
import pytest

import gradcheck
from ensemble_codesearch import encoder as enc
from ensemble_codesearch.corpus import PairExample, PerspectiveDataset, build_perspective_dataset
from ensemble_codesearch.errors import ArtifactError, ContractError, DivergenceError
from ensemble_codesearch.synthetic import generate_corpus


def pair(q, c, label, i=0):
    return PairExample(f"p{i}", f"o{i}", q, c, label, "original")


def toy_dataset():
    return PerspectiveDataset("toy", [
        pair("sort list", "sortList items", 1, 0),
        pair("sort list", "openSocket port", 0, 1),
        pair("open socket", "openSocket port", 1, 2),
        pair("open socket", "sortList items", 0, 3),
    ], 0)


def two_example_dataset():
    return PerspectiveDataset("toy", [pair("alpha", "alpha beta", 1, 0), pair("gamma", "delta", 0, 1)], 0)


def randomized(model, seed=0):
    rng = np.random.default_rng(seed)
    for k, v in model.params.items():
        model.params[k] = rng.normal(0, 0.5, size=v.shape)
    return model


# vocabulary and tokenization

def test_vocab_single_token():
    v = enc.build_vocab(["foo"] * 5, 2)
    assert v.itos == list(enc.SPECIALS) + ["foo"]


def test_vocab_infinite_min_frequency():
    v = enc.build_vocab(["foo bar foo"], math.inf)
    assert v.itos == list(enc.SPECIALS)
    assert set(enc.model_tokenize("foo", "bar", v)[[1, 3]]) == {enc.UNK}


def test_vocab_order_and_determinism():
    texts = ["b a a c", "c c a"]
    v1, v2 = enc.build_vocab(texts, 1), enc.build_vocab(texts, 1)
    assert v1.itos[4:] == ["a", "c", "b"]
    assert v1.text() == v2.text()


def test_identifier_splitting():
    assert enc.model_tokens("get label") == ("get", "label")
    assert enc.model_tokens("getFieldLabel()") == ("get", "field", "label")
    assert enc.model_tokens("snake_case_name HTTPServer x2") == ("snake", "case", "name", "http", "server", "x", "2")


def test_label_case_query_overlaps_code_subtokens(label_src):
    overlap = set(enc.model_tokens("get the field label")) & set(enc.model_tokens(label_src))
    assert {"get", "field", "label"} <= overlap


def test_tokenize_empty_pair():
    v = enc.build_vocab(["x"], 1)
    assert enc.model_tokenize("", "", v).tolist() == [enc.BOS, enc.SEP]


def test_tokenize_all_oov():
    v = enc.build_vocab(["known"], 1)
    seq = enc.model_tokenize("unknown words", "more strangers", v)
    assert [t for t in seq if t not in (enc.BOS, enc.SEP)] == [enc.UNK] * 4


def test_truncation_keeps_query():
    v = enc.build_vocab(["q c"], 1)
    seq = enc.model_tokenize("q q q", "c " * 50, v, max_len=8)
    q = v.index("q")
    assert len(seq) == 8 and seq[:5].tolist() == [enc.BOS, q, q, q, enc.SEP]


# encode and classify

def mean_model(seed=0, d=6):
    v = enc.build_vocab(["a b c d e f g"], 1)
    return enc.init_model(v, d, "mean", seed)


def test_encode_single_token():
    m = mean_model()
    np.testing.assert_array_equal(enc.encode(np.array([5]), m), m.params["embedding"][5])


def test_encode_repeat_idempotent():
    m = mean_model()
    np.testing.assert_allclose(enc.encode(np.array([5, 5]), m), enc.encode(np.array([5]), m), rtol=0, atol=1e-15)


def test_encode_brute_force_average():
    m = mean_model(seed=3)
    rng = np.random.default_rng(1)
    seq = rng.integers(1, len(m.vocab), size=5)
    E = m.params["embedding"]
    oracle = [sum(E[t][j] for t in seq) / 5 for j in range(m.hidden_dim)]
    np.testing.assert_allclose(enc.encode(seq, m), oracle, rtol=0, atol=1e-12)


def test_encode_ignores_padding():
    m = mean_model()
    np.testing.assert_allclose(enc.encode(np.array([5, enc.PAD, 6]), m), enc.encode(np.array([5, 6]), m))


def test_encode_empty_is_contract_error():
    with pytest.raises(ContractError):
        enc.encode(np.array([], dtype=np.int64), mean_model())


def test_attention_with_zero_vector_is_mean():
    m = mean_model()
    att = enc.init_model(m.vocab, m.hidden_dim, "attention", 0)
    seq = np.array([4, 5, 9])
    np.testing.assert_allclose(enc.encode(seq, att), enc.encode(seq, m))


def test_interaction_is_product_of_segment_means():
    m = enc.init_model(mean_model().vocab, 6, "interaction", 2)
    E = m.params["embedding"]
    seq = np.array([enc.BOS, 4, enc.SEP, 5, 6])
    expected = ((E[enc.BOS] + E[4]) / 2) * ((E[enc.SEP] + E[5] + E[6]) / 3)
    np.testing.assert_allclose(enc.encode(seq, m), expected)


def test_classify_zero_head():
    m = mean_model()
    assert enc.classify(np.ones(m.hidden_dim), m) == 0.5


@pytest.mark.parametrize("level", [-30.0, 0.0, 7.5])
def test_classify_equal_logits(level):
    m = mean_model()
    m.params["head_b"] = np.array([level, level])
    assert enc.classify(np.zeros(m.hidden_dim), m) == 0.5


def test_classify_logit_margin_two():
    m = mean_model()
    m.params["head_b"] = np.array([0.0, 2.0])  # positive-class logit leads by 2
    assert enc.classify(np.zeros(m.hidden_dim), m) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
    assert enc.classify(np.zeros(m.hidden_dim), m) == pytest.approx(0.8808, abs=1e-4)


def test_classify_strictly_inside_unit_interval():
    m = randomized(mean_model())
    for seed in range(20):
        p = enc.classify(np.random.default_rng(seed).normal(0, 3, m.hidden_dim), m)
        assert 0 < p < 1


def test_classify_rejects_wrong_width():
    with pytest.raises(ContractError):
        enc.classify(np.zeros(3), mean_model(d=6))


# score

def test_untrained_score_is_half():
    m = enc.init_model(enc.build_vocab(["x"], 1), 8)
    assert enc.score(m, "any query", "anyCode()") == 0.5


def test_score_is_pure():
    m = randomized(enc.init_model(enc.build_vocab(["a b"], 1), 4))
    assert enc.score(m, "a", "b") == enc.score(m, "a", "b")


# gradients

@pytest.mark.parametrize("pooling", enc.POOLINGS)
def test_gradients_match_finite_differences(pooling):
    ds = build_perspective_dataset(generate_corpus(4, seed=2), "structure", 0)
    examples = ds.examples[:8]
    vocab = enc.build_vocab(enc.dataset_texts(examples), 1)
    model = randomized(enc.init_model(vocab, 5, pooling, 0), seed=4)
    seqs = [model.tokenize(e.query, e.code) for e in examples]
    labels = np.array([e.label for e in examples])
    _, grads = enc.loss_and_grads(model, seqs, labels)
    assert set(grads) == set(model.params)
    checked, worst, failures = gradcheck.check(lambda: enc.loss_and_grads(model, seqs, labels, ())[0],
                                               model.params, grads)
    assert not failures, failures[:5]
    assert checked == sum(v.size for v in model.params.values())


def test_trainable_subset():
    model = randomized(enc.init_model(enc.build_vocab(["a b"], 1), 3))
    _, grads = enc.loss_and_grads(model, [np.array([2, 4, 3, 5])], np.array([1]), ["head_w"])
    assert set(grads) == {"head_w"}


# training

def test_two_example_separable():
    cfg = enc.TrainConfig(epochs=200, lr=0.05, hidden_dim=8, min_frequency=1, batch_size=2)
    model = enc.train(two_example_dataset(), cfg)
    assert model.loss_curve[-1] < 0.1
    assert len(model.loss_curve) == 200


def test_training_is_bit_identical():
    cfg = enc.TrainConfig(epochs=20, lr=0.05, hidden_dim=8, min_frequency=1, seed=3)
    a, b = enc.train(toy_dataset(), cfg), enc.train(toy_dataset(), cfg)
    assert a.param_hash() == b.param_hash() and a.loss_curve == b.loss_curve


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"lr": 0.0}, {"optimizer": "rmsprop"}, {"pooling": "max"}])
def test_bad_config(kwargs):
    with pytest.raises(ContractError):
        enc.TrainConfig(**kwargs)


def test_trained_toy_ranks_positive_above_negative():
    cfg = enc.TrainConfig(epochs=150, lr=0.05, hidden_dim=8, min_frequency=1, batch_size=4)
    model = enc.train(toy_dataset(), cfg)
    assert enc.score(model, "sort list", "sortList items") > enc.score(model, "sort list", "openSocket port")
    assert enc.score(model, "open socket", "openSocket port") > enc.score(model, "open socket", "sortList items")


def test_head_only_loss_is_monotone():
    # full-batch plain gradient descent on the convex head-only problem
    cfg = enc.TrainConfig(epochs=60, lr=0.5, hidden_dim=8, min_frequency=1, batch_size=4, optimizer="sgd",
                          freeze_embeddings=True)
    model = enc.train(toy_dataset(), cfg)
    curve = model.loss_curve
    assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))
    assert curve[-1] < curve[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard():
    cfg = enc.TrainConfig(epochs=5, lr=1e300, hidden_dim=4, min_frequency=1, optimizer="sgd", clip_norm=None)
    with pytest.raises(DivergenceError):
        enc.train(toy_dataset(), cfg)


def test_empty_dataset():
    with pytest.raises(ContractError):
        enc.train(PerspectiveDataset("x", [], 0))


# artifacts

def test_save_load_round_trip(tmp_path):
    cfg = enc.TrainConfig(epochs=5, lr=0.05, hidden_dim=8, min_frequency=1, pooling="attention")
    model = enc.train(toy_dataset(), cfg)
    digest = enc.save_model(model, tmp_path / "m")
    back = enc.load_model(tmp_path / "m")
    assert back.param_hash() == model.param_hash()
    assert back.config == cfg and back.loss_curve == model.loss_curve
    assert enc.score(back, "sort list", "sortList") == enc.score(model, "sort list", "sortList")
    assert digest == enc.artifact_hash(tmp_path / "m")
    manifest = enc.read_manifest(tmp_path / "m")
    assert manifest["vocab_sha256"] == model.vocab.sha256() and manifest["pooling"] == "attention"


def test_save_is_byte_identical(tmp_path):
    cfg = enc.TrainConfig(epochs=3, hidden_dim=4, min_frequency=1)
    enc.save_model(enc.train(toy_dataset(), cfg), tmp_path / "a")
    enc.save_model(enc.train(toy_dataset(), cfg), tmp_path / "b")
    for name in ("manifest.json", "vocab.txt", "tensors.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_tensor_file_is_little_endian_float32(tmp_path):
    model = enc.train(toy_dataset(), enc.TrainConfig(epochs=1, hidden_dim=4, min_frequency=1))
    enc.save_model(model, tmp_path / "m")
    raw = (tmp_path / "m" / "tensors.bin").read_bytes()
    assert len(raw) == 4 * sum(v.size for v in model.params.values())
    layout = {t["name"]: t for t in enc.read_manifest(tmp_path / "m")["tensors"]}
    emb = np.frombuffer(raw, "<f4", count=model.params["embedding"].size, offset=layout["embedding"]["offset"])
    np.testing.assert_array_equal(emb.reshape(layout["embedding"]["shape"]), model.params["embedding"])


def test_tampered_artifact_rejected(tmp_path):
    model = enc.train(toy_dataset(), enc.TrainConfig(epochs=1, hidden_dim=4, min_frequency=1))
    enc.save_model(model, tmp_path / "m")
    path = tmp_path / "m" / "tensors.bin"
    raw = bytearray(path.read_bytes())
    raw[0] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ArtifactError):
        enc.load_model(tmp_path / "m")


def test_missing_artifact(tmp_path):
    with pytest.raises(ArtifactError):
        enc.load_model(tmp_path / "nothing")
