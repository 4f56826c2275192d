import copy
import json

import numpy as np
import pytest

import gradcheck
from ensemble_codesearch import encoder as enc
from ensemble_codesearch import ensemble as ens
from ensemble_codesearch.corpus import PairExample, PerspectiveDataset
from ensemble_codesearch.errors import ArtifactError, ContractError


def pair(q, c, label, i):
    return PairExample(f"p{i}", f"o{i}", q, c, label, "original")


TOY = PerspectiveDataset("original", [
    pair("sort list", "sortList items", 1, 0),
    pair("sort list", "openSocket port", 0, 1),
    pair("open socket", "openSocket port", 1, 2),
    pair("open socket", "sortList items", 0, 3),
], 0)


def member(seed, d=6, pooling="interaction", perspective=""):
    vocab = enc.build_vocab(enc.dataset_texts(TOY.examples), 1)
    m = enc.init_model(vocab, d, pooling, seed, perspective=perspective)
    rng = np.random.default_rng(seed + 100)
    m.params["head_w"] = rng.normal(0, 0.5, (2, d))
    return m


@pytest.fixture
def members():
    return [member(1, 6, perspective="structure"), member(2, 4, "mean", "variable"),
            member(3, 5, "attention", "api")]


def test_concat_dimension(members):
    big = [member(i, 128) for i in range(3)]
    assert len(ens.concat_hidden(big, "q", "c")) == 384
    assert ens.EnsembleModel(members, ["a", "b", "c"], ens.init_mlp(15, 7, 0)).d_total == 15


def test_identical_members_repeat_block():
    m = member(1)
    out = ens.concat_hidden([m, m, m], "sort list", "sortList")
    d = m.hidden_dim
    np.testing.assert_array_equal(out[:d], out[d : 2 * d])
    np.testing.assert_array_equal(out[:d], out[2 * d :])


def test_blockwise_consistency(members):
    out = ens.concat_hidden(members, "open socket", "openSocket port")
    offset = 0
    for m in members:
        standalone = enc.encode(m.tokenize("open socket", "openSocket port"), m)
        np.testing.assert_array_equal(out[offset : offset + m.hidden_dim], standalone)
        offset += m.hidden_dim


def test_zero_final_layer_scores_half(members):
    model = ens.EnsembleModel(members, ["s", "v", "a"], ens.init_mlp(15, 7, 0))
    assert ens.ensemble_score(model, "anything", "atAll()") == 0.5


def test_member_order_changes_layout(members):
    a = ens.concat_hidden(members, "sort list", "sortList")
    b = ens.concat_hidden(members[::-1], "sort list", "sortList")
    assert not np.array_equal(a, b)


def test_two_linear_layers(members):
    params = ens.init_mlp(15, 7, 0)
    assert set(params) == {"w1", "b1", "w2", "b2"}
    assert params["w1"].shape == (7, 15) and params["w2"].shape == (2, 7)


def test_mlp_gradients(members):
    params = ens.init_mlp(15, 7, 0)
    rng = np.random.default_rng(5)
    params["w2"] = rng.normal(0, 0.5, (2, 7))
    params["b1"] = rng.normal(0, 0.1, 7)
    H = rng.normal(0, 1, (8, 15))
    labels = rng.integers(0, 2, 8)
    _, grads, dH = ens.mlp_loss_and_grads(params, H, labels)
    _, _, failures = gradcheck.check(lambda: ens.mlp_loss_and_grads(params, H, labels)[0], params, grads)
    assert not failures
    _, _, failures = gradcheck.check(lambda: ens.mlp_loss_and_grads(params, H, labels)[0], {"H": H}, {"H": dH})
    assert not failures


def test_finetune_gradients_reach_members(members):
    model = ens.EnsembleModel(members, ["s", "v", "a"], ens.init_mlp(15, 7, 0))
    model.params["w2"] = np.random.default_rng(0).normal(0, 0.5, (2, 7))
    q = [e.query for e in TOY.examples]
    c = [e.code for e in TOY.examples]
    y = np.array([e.label for e in TOY.examples])
    _, grads = ens.loss_and_grads(model, q, c, y, finetune_members=True)
    flat = dict(model.params)
    for i, m in enumerate(members):
        for name in m.params:
            flat[f"m{i}.{name}"] = m.params[name]
    names = ["m0.embedding", "m2.attention"]
    _, _, failures = gradcheck.check(lambda: ens.loss_and_grads(model, q, c, y)[0], flat, grads, names)
    assert not failures


def test_frozen_members_unchanged(members):
    before = [m.param_hash() for m in members]
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=30, lr=0.05))
    assert [m.param_hash() for m in members] == before
    assert [m.param_hash() for m in model.members] == before


def test_finetune_changes_copies_only(members):
    before = [m.param_hash() for m in members]
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=10, lr=0.05), freeze_members=False)
    assert [m.param_hash() for m in members] == before
    assert [m.param_hash() for m in model.members] != before


def test_separable_toy_fits():
    trained = [enc.train(TOY, enc.TrainConfig(epochs=100, lr=0.05, hidden_dim=6, min_frequency=1, pooling=p, seed=i))
               for i, p in enumerate(enc.POOLINGS)]
    model = ens.train_ensemble(trained, TOY, enc.TrainConfig(epochs=50, lr=0.05))
    assert model.loss_curve[-1] < 0.1
    assert ens.ensemble_score(model, "sort list", "sortList items") > 0.5


def test_training_is_deterministic(members):
    cfg = enc.TrainConfig(epochs=20, lr=0.05, seed=7)
    a = ens.train_ensemble(members, TOY, cfg)
    b = ens.train_ensemble(copy.deepcopy(members), TOY, cfg)
    assert a.param_hash() == b.param_hash()


def test_hidden_width_default(members):
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=1))
    assert model.mlp_hidden == 15 // 2


def test_role_count_mismatch(members):
    with pytest.raises(ContractError):
        ens.train_ensemble(members, TOY, roles=["a"])


def test_artifact_round_trip(tmp_path, members):
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=5, lr=0.05), roles=["structure", "variable", "api"])
    ens.save_ensemble(model, tmp_path / "e", ["h1", "h2", "h3"])
    back = ens.load_ensemble(tmp_path / "e")
    assert back.roles == ["structure", "variable", "api"]
    assert back.param_hash() == model.param_hash()
    assert ens.ensemble_score(back, "sort list", "sortList") == ens.ensemble_score(model, "sort list", "sortList")
    manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert manifest["mlp"]["nonlinearity"] == "relu" and manifest["freeze_members"] is True
    assert [m["role"] for m in manifest["members"]] == manifest["member_order"]


def test_reordered_members_rejected(tmp_path, members):
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=1), roles=["structure", "variable", "api"])
    ens.save_ensemble(model, tmp_path / "e")
    path = tmp_path / "e" / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["member_order"] = manifest["member_order"][::-1]
    path.write_text(json.dumps(manifest))
    with pytest.raises(ArtifactError):
        ens.load_ensemble(tmp_path / "e")


def test_tampered_member_rejected(tmp_path, members):
    model = ens.train_ensemble(members, TOY, enc.TrainConfig(epochs=1), roles=["structure", "variable", "api"])
    ens.save_ensemble(model, tmp_path / "e")
    vocab = tmp_path / "e" / "members" / "1-variable" / "vocab.txt"
    vocab.write_text(vocab.read_text() + "extra\n")
    with pytest.raises(ArtifactError):
        ens.load_ensemble(tmp_path / "e")
