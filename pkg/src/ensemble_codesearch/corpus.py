"""Corpus ingestion, pair construction and perspective dataset generation."""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .code_model import parse_source, tokenize_source
from .errors import CodeSearchError, ContractError, IngestError
from .transforms import ApiCatalog, has_jvm_api_invocation, permute_statements, rename_variables

log = logging.getLogger(__name__)

PERSPECTIVES = ("structure", "variable", "api")


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    code: str
    query: str
    origin_id: str | None = None
    provenance: str = "original"

    @property
    def origin(self) -> str:
        return self.origin_id or self.id


@dataclass
class Corpus:
    entries: list[CorpusEntry]
    skipped: int = 0
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


@dataclass(frozen=True)
class PairExample:
    id: str
    origin_id: str
    query: str
    code: str
    label: int
    provenance: str


@dataclass
class PerspectiveDataset:
    perspective: str
    examples: list[PairExample]
    generation_seed: int
    stats: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    @property
    def positives(self) -> int:
        return sum(e.label for e in self.examples)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return path.open("r", encoding="utf-8")


def ingest(path: str | Path) -> Corpus:
    """Read line-delimited JSON records with ``code`` and ``docstring`` fields.

    Records without an ``id`` get ``line-<n>``. Malformed or empty records are
    skipped and counted; later duplicates of an id are dropped.
    """
    path = Path(path)
    entries, seen = [], set()
    skipped = duplicates = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if not isinstance(record, dict):
                skipped += 1
                continue
            code = record.get("code")
            query = record.get("docstring", record.get("query"))
            if not isinstance(code, str) or not isinstance(query, str) or not code.strip() or not query.strip():
                skipped += 1
                continue
            entry_id = str(record["id"]) if record.get("id") is not None else f"line-{lineno}"
            if entry_id in seen:
                duplicates += 1
                continue
            seen.add(entry_id)
            entries.append(CorpusEntry(entry_id, code, query))
    if not entries:
        raise IngestError(f"{path}: no valid records ({skipped} skipped)")
    if skipped or duplicates:
        log.info("%s: skipped %d malformed and %d duplicate records", path, skipped, duplicates)
    return Corpus(entries, skipped, duplicates)


def write_corpus(corpus: Iterable[CorpusEntry], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for e in corpus:
            fh.write(json.dumps({"id": e.id, "code": e.code, "docstring": e.query},
                                ensure_ascii=False, sort_keys=True) + "\n")


def make_pairs(entries: Sequence[CorpusEntry], seed: int) -> list[PairExample]:
    """One positive and one mismatched-query negative per entry.

    The negative's query is drawn uniformly (with replacement across entries)
    from entries of a different origin whose query text differs.
    """
    entries = list(entries)
    if len(entries) < 2 or len({e.query for e in entries}) < 2:
        raise ContractError("make_pairs needs at least two entries with distinct queries")
    rng = random.Random(seed)
    n = len(entries)
    pairs = []
    for e in entries:
        partner = None
        for _ in range(64):
            cand = entries[rng.randrange(n)]
            if cand.origin != e.origin and cand.query != e.query:
                partner = cand
                break
        if partner is None:
            pool = [c for c in entries if c.origin != e.origin and c.query != e.query]
            if not pool:
                raise ContractError(f"no mismatched query available for {e.id}")
            partner = pool[rng.randrange(len(pool))]
        pairs.append(PairExample(f"{e.id}/pos", e.origin, e.query, e.code, 1, e.provenance))
        pairs.append(PairExample(f"{e.id}/neg", e.origin, partner.query, e.code, 0, e.provenance))
    return pairs


@dataclass(frozen=True)
class AugmentOptions:
    rename_order: str = "lexicographic"
    all_variants: bool = False
    adjacent_only: bool = True
    conservative: bool = False
    variants_per_entry: int = 1


def _augment_one(args):
    """Returns (entries to keep, transform records, status) for one entry."""
    entry, perspective, seed, opts, catalog = args
    try:
        ast = parse_source(entry.code)
    except CodeSearchError:
        ast = None
    if perspective == "api":
        if ast is not None:
            ok, _ = has_jvm_api_invocation(ast, catalog)
        else:
            try:
                ok, _ = has_jvm_api_invocation(tokenize_source(entry.code), catalog)
            except CodeSearchError:
                ok = False
        return ([entry] if ok else []), [], "untransformable" if ast is None else "ok"
    if ast is None:
        return [entry], [], "untransformable"
    if perspective == "structure":
        renamed, rmap = rename_variables(ast, opts.rename_order)
        if rmap.identity:
            return [entry], [], "identity"
        variant = CorpusEntry(f"{entry.id}#renamed", renamed.source, entry.query, entry.id, "renamed")
        record = {"id": variant.id, "kind": "rename", "input_hash": hashlib.sha256(entry.code.encode()).hexdigest(),
                  "rename": {str(b): [rmap.originals[b], rmap.entries[b]] for b in sorted(rmap.entries)}}
        return [entry, variant], [record], "ok"
    variants = permute_statements(ast, seed, all_variants=opts.all_variants, adjacent_only=opts.adjacent_only,
                                  conservative=opts.conservative, max_variants=opts.variants_per_entry)
    if not variants:
        return [entry], [], "identity"
    out, records = [entry], []
    for k, (vast, rec) in enumerate(variants):
        suffix = "#permuted" if len(variants) == 1 else f"#permuted{k}"
        out.append(CorpusEntry(f"{entry.id}{suffix}", vast.source, entry.query, entry.id, "permuted"))
        records.append({"id": f"{entry.id}{suffix}", **rec.to_json()})
    return out, records, "ok"


def build_perspective_dataset(corpus: Iterable[CorpusEntry], perspective: str, seed: int,
                              catalog: ApiCatalog | None = None, options: AugmentOptions | None = None,
                              workers: int = 1) -> PerspectiveDataset:
    """Augment (structure, variable) or filter (api) the corpus, then pair it."""
    if perspective not in PERSPECTIVES:
        raise ContractError(f"unknown perspective {perspective!r}")
    catalog = catalog or ApiCatalog.load()
    options = options or AugmentOptions()
    jobs = [(e, perspective, seed, options, catalog) for e in corpus]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_augment_one, jobs, chunksize=16))
    else:
        results = [_augment_one(job) for job in jobs]

    entries, records = [], []
    status_counts = {"ok": 0, "identity": 0, "untransformable": 0}
    untransformable = []
    for job, (kept, recs, status) in zip(jobs, results):
        entries.extend(kept)
        records.extend(recs)
        status_counts[status] += 1
        if status == "untransformable":
            untransformable.append(job[0].id)
    examples = make_pairs(entries, seed)
    stats = {
        "input_entries": len(jobs),
        "entries": len(entries),
        "augmented": sum(e.provenance != "original" for e in entries),
        "positives": sum(x.label for x in examples),
        "negatives": sum(1 - x.label for x in examples),
        "status": status_counts,
        "untransformable": untransformable,
    }
    return PerspectiveDataset(perspective, examples, seed, stats, records)


def original_pairs(corpus: Iterable[CorpusEntry], seed: int) -> PerspectiveDataset:
    """Unaugmented pair dataset, as used to train the ensemble head."""
    entries = list(corpus)
    examples = make_pairs(entries, seed)
    return PerspectiveDataset("original", examples, seed, {"entries": len(entries)})


def split(corpus: Sequence[CorpusEntry], ratios: tuple[float, float, float], seed: int
          ) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded partition into train/valid/test; valid and test sizes are floored."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    entries = list(corpus)
    n = len(entries)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_valid = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train = n - n_valid - n_test
    parts = (order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:])
    return tuple(Corpus([entries[i] for i in sorted(part)]) for part in parts)


# dataset files ------------------------------------------------------------

def dataset_lines(dataset: PerspectiveDataset) -> list[str]:
    lines = []
    for ex in dataset.examples:
        record = asdict(ex)
        record["perspective"] = dataset.perspective
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return lines


def write_dataset(dataset: PerspectiveDataset, path: str | Path, manifest_extra: dict | None = None) -> dict:
    """Write the dataset and its ``.manifest.json`` sidecar; returns the manifest."""
    path = Path(path)
    body = "".join(line + "\n" for line in dataset_lines(dataset))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body, encoding="utf-8", newline="\n")
    manifest = {
        "perspective": dataset.perspective,
        "seed": dataset.generation_seed,
        "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "counts": {k: v for k, v in dataset.stats.items() if k != "untransformable"},
        "untransformable": dataset.stats.get("untransformable", []),
    }
    manifest.update(manifest_extra or {})
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    return manifest


def read_dataset(path: str | Path) -> PerspectiveDataset:
    examples, perspective = [], None
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            perspective = perspective or r.get("perspective")
            examples.append(PairExample(r["id"], r["origin_id"], r["query"], r["code"], int(r["label"]),
                                        r["provenance"]))
    if not examples:
        raise IngestError(f"{path}: empty dataset")
    seed = 0
    sidecar = Path(str(path) + ".manifest.json")
    if sidecar.exists():
        seed = json.loads(sidecar.read_text(encoding="utf-8")).get("seed", 0)
    return PerspectiveDataset(perspective or "original", examples, seed)
