"""Concatenation ensemble of perspective encoders with a two-layer MLP head."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder as enc
from .errors import ArtifactError, ContractError, DivergenceError

DEFAULT_ROLES = ("structure", "variable", "api")


@dataclass
class EnsembleModel:
    members: list[enc.EncoderModel]
    roles: list[str]
    params: dict[str, np.ndarray]
    freeze_members: bool = True
    seed: int = 0
    config: enc.TrainConfig | None = None
    loss_curve: list[float] = field(default_factory=list)

    @property
    def d_total(self) -> int:
        return sum(m.hidden_dim for m in self.members)

    @property
    def mlp_hidden(self) -> int:
        return self.params["w1"].shape[0]

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def init_mlp(d_total: int, hidden: int, seed: int) -> dict[str, np.ndarray]:
    """First layer Glorot-uniform from ``seed``; second layer zero so untrained scores are 0.5."""
    rng = np.random.default_rng(seed)
    limit = math.sqrt(6.0 / (d_total + hidden))
    return {
        "w1": rng.uniform(-limit, limit, size=(hidden, d_total)),
        "b1": np.zeros(hidden),
        "w2": np.zeros((2, hidden)),
        "b2": np.zeros(2),
    }


def member_hidden(members: Sequence[enc.EncoderModel], queries: Sequence[str], codes: Sequence[str]):
    """Concatenated member hidden vectors (B x d_total) and per-member caches."""
    blocks, caches = [], []
    for m in members:
        seqs = [m.tokenize(q, c) for q, c in zip(queries, codes)]
        H, cache = enc.encode_batch(m, seqs)
        blocks.append(H)
        caches.append(cache)
    return np.concatenate(blocks, axis=1), caches


def concat_hidden(members: Sequence[enc.EncoderModel], query: str, code: str) -> np.ndarray:
    return member_hidden(members, [query], [code])[0][0]


def mlp_forward(params, H):
    Z1 = H @ params["w1"].T + params["b1"]
    A = np.maximum(Z1, 0.0)
    return A @ params["w2"].T + params["b2"], (H, Z1, A)


def mlp_loss_and_grads(params, H, labels):
    """Cross-entropy of the MLP on fixed inputs; gradients for the MLP and its input."""
    logits, (H, Z1, A) = mlp_forward(params, H)
    loss, dlogits = enc.cross_entropy(logits, np.asarray(labels))
    dA = dlogits @ params["w2"]
    dZ1 = dA * (Z1 > 0)
    grads = {
        "w2": dlogits.T @ A,
        "b2": dlogits.sum(0),
        "w1": dZ1.T @ H,
        "b1": dZ1.sum(0),
    }
    return loss, grads, dZ1 @ params["w1"]


def loss_and_grads(model: EnsembleModel, queries, codes, labels, finetune_members: bool = False):
    """Batch loss; member gradients are keyed ``m<i>.<param>`` when fine-tuning."""
    H, caches = member_hidden(model.members, queries, codes)
    loss, grads, dH = mlp_loss_and_grads(model.params, H, labels)
    if finetune_members:
        offset = 0
        for i, (m, cache) in enumerate(zip(model.members, caches)):
            block = dH[:, offset : offset + m.hidden_dim]
            offset += m.hidden_dim
            for name, g in enc.backward_encode(m, cache, block).items():
                grads[f"m{i}.{name}"] = g
    return loss, grads


def _check_members(members, roles):
    if not members:
        raise ContractError("ensemble needs at least one member")
    if len(roles) != len(members):
        raise ContractError("one role per member required")


def train_ensemble(members: Sequence[enc.EncoderModel], dataset, config: enc.TrainConfig | None = None,
                   freeze_members: bool = True, roles: Sequence[str] | None = None,
                   mlp_hidden: int | None = None) -> EnsembleModel:
    """Train the MLP head on concatenated member encodings of an (unaugmented) pair dataset.

    With ``freeze_members`` the member encoders are used as fixed feature
    extractors; otherwise copies of them are updated along with the head.
    The MLP hidden width defaults to half the concatenated dimension.
    """
    config = config or enc.TrainConfig()
    roles = list(roles) if roles is not None else [m.perspective or f"member{i}" for i, m in enumerate(members)]
    _check_members(members, roles)
    members = list(members) if freeze_members else [copy.deepcopy(m) for m in members]
    d_total = sum(m.hidden_dim for m in members)
    hidden = mlp_hidden or max(1, d_total // 2)
    model = EnsembleModel(members, roles, init_mlp(d_total, hidden, config.seed), freeze_members,
                          config.seed, config)
    examples = list(dataset.examples)
    if not examples:
        raise ContractError("cannot train on an empty dataset")
    queries = [ex.query for ex in examples]
    codes = [ex.code for ex in examples]
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    features = member_hidden(members, queries, codes)[0] if freeze_members else None

    member_keys = {}
    if not freeze_members:
        for i, m in enumerate(members):
            for name in m.params:
                if name in ("embedding", "attention"):
                    member_keys[f"m{i}.{name}"] = (m, name)
    opt = enc.Optimizer(config.optimizer, config.lr, config.clip_norm)
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        losses, sizes = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if freeze_members:
                loss, grads, _ = mlp_loss_and_grads(model.params, features[idx], labels[idx])
            else:
                loss, grads = loss_and_grads(model, [queries[i] for i in idx], [codes[i] for i in idx],
                                             labels[idx], finetune_members=True)
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {start // config.batch_size}")
            flat = dict(model.params)
            for key, (m, name) in member_keys.items():
                flat[key] = m.params[name]
            opt.step(flat, grads)
            for key in model.params:
                model.params[key] = flat[key]
            for key, (m, name) in member_keys.items():
                m.params[name] = flat[key]
            losses.append(loss)
            sizes.append(len(idx))
        model.loss_curve.append(float(np.average(losses, weights=sizes)))
    enc.round_to_float32(model.params)
    if not freeze_members:
        for m in members:
            enc.round_to_float32(m.params)
    return model


def ensemble_score_batch(model: EnsembleModel, query: str, codes: Sequence[str]) -> np.ndarray:
    H, _ = member_hidden(model.members, [query] * len(codes), codes)
    logits, _ = mlp_forward(model.params, H)
    return enc.softmax(logits)[:, 1]


def ensemble_score(model: EnsembleModel, query: str, code: str) -> float:
    return float(ensemble_score_batch(model, query, [code])[0])


# artifacts ------------------------------------------------------------------

def save_ensemble(model: EnsembleModel, directory: str | Path, source_hashes: Sequence[str] | None = None) -> str:
    """Write a self-contained artifact: MLP tensors plus a copy of every member."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    member_entries = []
    for i, (m, role) in enumerate(zip(model.members, model.roles)):
        sub = f"members/{i}-{role}"
        digest = enc.save_model(m, directory / sub)
        member_entries.append({"index": i, "role": role, "path": sub, "artifact_sha256": digest,
                               "hidden_dim": m.hidden_dim})
    layout = enc.write_tensors(model.params, directory / "mlp.bin")
    manifest = {
        "type": "ensemble",
        "format_version": 1,
        "members": member_entries,
        "member_order": list(model.roles),
        "source_member_hashes": list(source_hashes) if source_hashes else None,
        "d_total": model.d_total,
        "mlp": {"layers": [[model.d_total, model.mlp_hidden], [model.mlp_hidden, 2]], "nonlinearity": "relu"},
        "tensors": layout,
        "tensors_sha256": enc.file_sha256(directory / "mlp.bin"),
        "freeze_members": model.freeze_members,
        "seed": model.seed,
        "train_config": model.config.to_json() if model.config else None,
        "loss_curve": model.loss_curve,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8", newline="\n")
    return enc.artifact_hash(directory)


def load_ensemble(directory: str | Path) -> EnsembleModel:
    directory = Path(directory)
    manifest = enc.read_manifest(directory)
    if manifest.get("type") != "ensemble":
        raise ArtifactError(f"{directory}: not an ensemble artifact")
    members, roles = [], []
    for entry in manifest["members"]:
        sub = directory / entry["path"]
        if enc.artifact_hash(sub) != entry["artifact_sha256"]:
            raise ArtifactError(f"{sub}: member artifact hash mismatch")
        members.append(enc.load_model(sub))
        roles.append(entry["role"])
    if roles != manifest["member_order"]:
        raise ArtifactError(f"{directory}: member order does not match manifest")
    tensor_path = directory / "mlp.bin"
    if enc.file_sha256(tensor_path) != manifest["tensors_sha256"]:
        raise ArtifactError(f"{directory}: MLP tensor hash mismatch")
    params = enc.read_tensors(tensor_path, manifest["tensors"])
    if params["w1"].shape[1] != sum(m.hidden_dim for m in members):
        raise ArtifactError(f"{directory}: MLP input width does not match members")
    config = enc.TrainConfig.from_json(manifest["train_config"]) if manifest.get("train_config") else None
    return EnsembleModel(members, roles, params, manifest["freeze_members"], manifest["seed"], config,
                         list(manifest.get("loss_curve", [])))
