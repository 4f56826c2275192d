"""A small trainable cross-encoder for (query, code) pair classification.

The pair is tokenized as one sequence ``[BOS] query [SEP] code``, embedded,
pooled into a hidden vector of width ``d`` and mapped to two logits by an
affine head. Three pooling modes are available:

``mean``
    average embedding over all non-pad positions.
``attention``
    softmax-weighted average, weights from one learned score vector.
``interaction`` (default)
    elementwise product of the mean embedding of the query segment
    (``[BOS]`` + query) and of the code segment (``[SEP]`` + code).

Mean and attention pooling feed the head a quantity that is additive (or
nearly so) over tokens, so the head cannot tell a matched pair from a
mismatched one that uses the same words. The interaction mode gives the head
a bilinear query/code term and is the one that learns to rank.

Gradients are derived by hand and checked against finite differences in the
test suite.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArtifactError, ContractError, DivergenceError

PAD, UNK, BOS, SEP = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<sep>")
POOLINGS = ("mean", "attention", "interaction")

_WORD_RE = re.compile(r"[^\W_]+")
_CAMEL_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+")


@functools.lru_cache(maxsize=200_000)
def model_tokens(text: str) -> tuple[str, ...]:
    """Lowercased subtokens: split on whitespace/punctuation, then camelCase and digits."""
    out = []
    for word in _WORD_RE.findall(text):
        parts = _CAMEL_RE.findall(word)
        if "".join(parts) != word:
            parts = [word]
        out.extend(p.lower() for p in parts)
    return tuple(out)


@dataclass
class ModelVocab:
    itos: list[str]
    min_frequency: float = 2

    def __post_init__(self):
        if tuple(self.itos[:4]) != SPECIALS:
            raise ContractError("vocabulary must start with the four special tokens")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.itos)

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def text(self) -> str:
        return "".join(t + "\n" for t in self.itos)

    def sha256(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()


def build_vocab(texts: Iterable[str], min_frequency: float = 2) -> ModelVocab:
    """Vocabulary ordered by descending frequency, then token text."""
    counts = Counter()
    for text in texts:
        counts.update(model_tokens(text))
    kept = [t for t, c in counts.items() if c >= min_frequency and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return ModelVocab(list(SPECIALS) + kept, min_frequency)


def dataset_texts(examples) -> Iterable[str]:
    for ex in examples:
        yield ex.query
        yield ex.code


def model_tokenize(query: str, code: str, vocab: ModelVocab, max_len: int = 256) -> np.ndarray:
    """``[BOS] query [SEP] code`` as vocabulary indices; code is truncated first."""
    q = [vocab.index(t) for t in model_tokens(query)]
    c = [vocab.index(t) for t in model_tokens(code)]
    room = max_len - 2
    if len(q) > room:
        q = q[:room]
    c = c[: room - len(q)]
    return np.array([BOS, *q, SEP, *c], dtype=np.int64)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    optimizer: str = "adam"  # adam | sgd
    clip_norm: float | None = 5.0
    seed: int = 0
    hidden_dim: int = 128
    pooling: str = "interaction"
    max_len: int = 256
    min_frequency: float = 2
    freeze_embeddings: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 1 or self.hidden_dim < 1:
            raise ContractError("batch_size and hidden_dim must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.pooling not in POOLINGS:
            raise ContractError(f"unknown pooling {self.pooling!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        if isinstance(d["min_frequency"], float) and math.isinf(d["min_frequency"]):
            d["min_frequency"] = "inf"
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("min_frequency") == "inf":
            d["min_frequency"] = math.inf
        return cls(**d)


@dataclass
class EncoderModel:
    vocab: ModelVocab
    params: dict[str, np.ndarray]
    pooling: str = "interaction"
    perspective: str = ""
    seed: int = 0
    max_len: int = 256
    config: TrainConfig | None = None
    loss_curve: list[float] = field(default_factory=list)

    @property
    def hidden_dim(self) -> int:
        return self.params["embedding"].shape[1]

    def tokenize(self, query: str, code: str) -> np.ndarray:
        return model_tokenize(query, code, self.vocab, self.max_len)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def init_model(vocab: ModelVocab, hidden_dim: int = 128, pooling: str = "interaction", seed: int = 0,
               max_len: int = 256, perspective: str = "") -> EncoderModel:
    """Embeddings uniform in [-0.05, 0.05]; head and attention vector start at zero."""
    if pooling not in POOLINGS:
        raise ContractError(f"unknown pooling {pooling!r}")
    rng = np.random.default_rng(seed)
    params = {
        "embedding": rng.uniform(-0.05, 0.05, size=(len(vocab), hidden_dim)),
        "head_w": np.zeros((2, hidden_dim)),
        "head_b": np.zeros(2),
    }
    if pooling == "attention":
        params["attention"] = np.zeros(hidden_dim)
    return EncoderModel(vocab, params, pooling, perspective, seed, max_len)


# forward / backward --------------------------------------------------------

def _segment_counts(seqs: Sequence[np.ndarray], vocab_size: int, segment: str) -> np.ndarray:
    """Row b holds token counts of the chosen segment of sequence b."""
    counts = np.zeros((len(seqs), vocab_size))
    for b, seq in enumerate(seqs):
        if segment == "all":
            part = seq[seq != PAD]
        else:
            sep = int(np.flatnonzero(seq == SEP)[0]) if (seq == SEP).any() else len(seq)
            part = seq[:sep] if segment == "query" else seq[sep:]
        np.add.at(counts[b], part, 1.0)
    return counts


def encode_batch(model: EncoderModel, seqs: Sequence[np.ndarray]):
    """Hidden vectors (B x d) plus the cache needed by ``backward_encode``."""
    if any(len(s) == 0 for s in seqs):
        raise ContractError("cannot encode an empty sequence")
    E = model.params["embedding"]
    V = E.shape[0]
    if model.pooling == "mean":
        C = _segment_counts(seqs, V, "all")
        n = C.sum(1, keepdims=True)
        if (n == 0).any():
            raise ContractError("sequence has no non-pad positions")
        H = C @ E / n
        return H, ("mean", C, n)
    if model.pooling == "interaction":
        Cq = _segment_counts(seqs, V, "query")
        Cc = _segment_counts(seqs, V, "code")
        nq = np.maximum(Cq.sum(1, keepdims=True), 1.0)
        nc = np.maximum(Cc.sum(1, keepdims=True), 1.0)
        hq = Cq @ E / nq
        hc = Cc @ E / nc
        return hq * hc, ("interaction", Cq, Cc, nq, nc, hq, hc)
    a = model.params["attention"]
    L = max(len(s) for s in seqs)
    ids = np.full((len(seqs), L), PAD, dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
    mask = ids != PAD
    if not mask.any(1).all():
        raise ContractError("sequence has no non-pad positions")
    X = E[ids]
    s = X @ a
    s = np.where(mask, s, -np.inf)
    s = s - s.max(1, keepdims=True)
    w = np.exp(s) * mask
    alpha = w / w.sum(1, keepdims=True)
    H = np.einsum("bl,bld->bd", alpha, X)
    return H, ("attention", ids, mask, X, alpha)


def backward_encode(model: EncoderModel, cache, dH: np.ndarray) -> dict[str, np.ndarray]:
    E = model.params["embedding"]
    kind = cache[0]
    if kind == "mean":
        _, C, n = cache
        return {"embedding": C.T @ (dH / n)}
    if kind == "interaction":
        _, Cq, Cc, nq, nc, hq, hc = cache
        return {"embedding": Cq.T @ (dH * hc / nq) + Cc.T @ (dH * hq / nc)}
    _, ids, mask, X, alpha = cache
    a = model.params["attention"]
    dalpha = np.einsum("bld,bd->bl", X, dH)
    ds = alpha * (dalpha - (alpha * dalpha).sum(1, keepdims=True))
    dX = alpha[:, :, None] * dH[:, None, :] + ds[:, :, None] * a[None, None, :]
    dE = np.zeros_like(E)
    np.add.at(dE, ids[mask], dX[mask])
    da = np.einsum("bl,bld->d", ds, X)
    return {"embedding": dE, "attention": da}


def head_logits(H: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return H @ W.T + b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    B = len(labels)
    loss = -logp[np.arange(B), labels].mean()
    d = np.exp(logp)
    d[np.arange(B), labels] -= 1.0
    return loss, d / B


def loss_and_grads(model: EncoderModel, seqs: Sequence[np.ndarray], labels: np.ndarray,
                   trainable: Iterable[str] | None = None):
    H, cache = encode_batch(model, seqs)
    W, b = model.params["head_w"], model.params["head_b"]
    loss, dlogits = cross_entropy(head_logits(H, W, b), np.asarray(labels))
    grads = {"head_w": dlogits.T @ H, "head_b": dlogits.sum(0)}
    trainable = set(model.params if trainable is None else trainable)
    if trainable - {"head_w", "head_b"}:
        grads.update(backward_encode(model, cache, dlogits @ W))
    return loss, {k: v for k, v in grads.items() if k in trainable}


def encode(pair_sequence: np.ndarray, model: EncoderModel) -> np.ndarray:
    return encode_batch(model, [np.asarray(pair_sequence)])[0][0]


def classify(hidden: np.ndarray, model: EncoderModel) -> float:
    """Positive-class probability of the head applied to one hidden vector."""
    hidden = np.asarray(hidden, dtype=float)
    if hidden.shape != (model.hidden_dim,):
        raise ContractError(f"hidden vector must have length {model.hidden_dim}")
    logits = head_logits(hidden[None, :], model.params["head_w"], model.params["head_b"])
    return float(softmax(logits)[0, 1])


def score(model: EncoderModel, query: str, code: str) -> float:
    return float(score_batch(model, query, [code])[0])


def score_batch(model: EncoderModel, query: str, codes: Sequence[str]) -> np.ndarray:
    seqs = [model.tokenize(query, c) for c in codes]
    H, _ = encode_batch(model, seqs)
    return softmax(head_logits(H, model.params["head_w"], model.params["head_b"]))[:, 1]


# optimisation ---------------------------------------------------------------

class Optimizer:
    def __init__(self, kind: str, lr: float, clip_norm: float | None):
        self.kind, self.lr, self.clip_norm = kind, lr, clip_norm
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.clip_norm:
                grads = {k: g * (self.clip_norm / norm) for k, g in grads.items()}
        self.t += 1
        for name in sorted(grads):
            g = grads[name]
            if self.kind == "sgd":
                params[name] -= self.lr * g
                continue
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            mhat = m / (1 - 0.9 ** self.t)
            vhat = v / (1 - 0.999 ** self.t)
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + 1e-8)


def round_to_float32(params: dict[str, np.ndarray]) -> None:
    """Snap parameters to float32-representable values so saved artifacts reload exactly."""
    for k in params:
        params[k] = params[k].astype(np.float32).astype(np.float64)


def train(dataset, config: TrainConfig | None = None, vocab: ModelVocab | None = None) -> EncoderModel:
    """Fit an encoder to a balanced pair dataset by minimising mean cross-entropy.

    Deterministic for a fixed ``config.seed``. The per-epoch mean batch loss
    is kept on ``model.loss_curve``.
    """
    config = config or TrainConfig()
    examples = list(dataset.examples)
    if not examples:
        raise ContractError("cannot train on an empty dataset")
    if vocab is None:
        vocab = build_vocab(dataset_texts(examples), config.min_frequency)
    model = init_model(vocab, config.hidden_dim, config.pooling, config.seed, config.max_len,
                       getattr(dataset, "perspective", ""))
    model.config = config
    seqs = [model.tokenize(ex.query, ex.code) for ex in examples]
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    trainable = ["head_w", "head_b"]
    if not config.freeze_embeddings:
        trainable += [k for k in ("embedding", "attention") if k in model.params]
    opt = Optimizer(config.optimizer, config.lr, config.clip_norm)
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        losses, sizes = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, [seqs[i] for i in idx], labels[idx], trainable)
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {start // config.batch_size}")
            opt.step(model.params, grads)
            losses.append(loss)
            sizes.append(len(idx))
        model.loss_curve.append(float(np.average(losses, weights=sizes)))
    round_to_float32(model.params)
    return model


def dataset_loss(model: EncoderModel, examples) -> float:
    seqs = [model.tokenize(ex.query, ex.code) for ex in examples]
    labels = np.array([ex.label for ex in examples])
    loss, _ = loss_and_grads(model, seqs, labels, trainable=())
    return float(loss)


# artifacts ------------------------------------------------------------------

def write_tensors(params: dict[str, np.ndarray], path: Path) -> list[dict]:
    layout, offset, chunks = [], 0, []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    path.write_bytes(b"".join(chunks))
    return layout


def read_tensors(path: Path, layout: list[dict]) -> dict[str, np.ndarray]:
    raw = path.read_bytes()
    params = {}
    for t in layout:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return params


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def artifact_hash(directory: str | Path) -> str:
    """Hash over every file of an artifact directory, in sorted relative-path order."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in sorted(q for q in directory.rglob("*") if q.is_file()):
        h.update(p.relative_to(directory).as_posix().encode())
        h.update(file_sha256(p).encode())
    return h.hexdigest()


def save_model(model: EncoderModel, directory: str | Path) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "vocab.txt").write_text(model.vocab.text(), encoding="utf-8", newline="\n")
    layout = write_tensors(model.params, directory / "tensors.bin")
    manifest = {
        "type": "encoder",
        "format_version": 1,
        "perspective": model.perspective,
        "pooling": model.pooling,
        "pair_embedding": "pooled over positions; no first-token readout",
        "hidden_dim": model.hidden_dim,
        "max_len": model.max_len,
        "seed": model.seed,
        "min_frequency": "inf" if math.isinf(model.vocab.min_frequency) else model.vocab.min_frequency,
        "vocab_size": len(model.vocab),
        "vocab_sha256": model.vocab.sha256(),
        "tensors": layout,
        "tensors_sha256": file_sha256(directory / "tensors.bin"),
        "train_config": model.config.to_json() if model.config else None,
        "loss_curve": model.loss_curve,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8", newline="\n")
    return artifact_hash(directory)


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ArtifactError(f"{directory}: missing manifest.json")
    return json.loads(path.read_text(encoding="utf-8"))


def load_model(directory: str | Path) -> EncoderModel:
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("type") != "encoder":
        raise ArtifactError(f"{directory}: not an encoder artifact")
    vocab_path, tensor_path = directory / "vocab.txt", directory / "tensors.bin"
    if not vocab_path.exists() or not tensor_path.exists():
        raise ArtifactError(f"{directory}: incomplete artifact")
    if file_sha256(tensor_path) != manifest["tensors_sha256"]:
        raise ArtifactError(f"{directory}: tensor file hash mismatch")
    min_freq = manifest["min_frequency"]
    vocab = ModelVocab(vocab_path.read_text(encoding="utf-8").splitlines(),
                       math.inf if min_freq == "inf" else min_freq)
    if vocab.sha256() != manifest["vocab_sha256"]:
        raise ArtifactError(f"{directory}: vocabulary hash mismatch")
    params = read_tensors(tensor_path, manifest["tensors"])
    config = TrainConfig.from_json(manifest["train_config"]) if manifest.get("train_config") else None
    return EncoderModel(vocab, params, manifest["pooling"], manifest["perspective"], manifest["seed"],
                        manifest["max_len"], config, list(manifest.get("loss_curve", [])))
