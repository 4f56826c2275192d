"""Ranking harness and the FRank / SuccessRate@k / MRR metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import CorpusEntry
from .errors import ContractError

# scorer(query_text, [code_text, ...]) -> scores, higher is better
Scorer = Callable[[str, Sequence[str]], Sequence[float]]

DEFAULT_KS = (1, 5, 10)
TIE_BREAK = "score descending, then candidate id ascending"


@dataclass
class RankingResult:
    query_id: str
    ranked: list[str]
    frank: int
    scores: list[float] = field(default_factory=list)


@dataclass
class MetricsReport:
    n_queries: int
    success_rate: dict[int, float]
    mrr: float
    results: list[RankingResult]
    distractors: int
    seed: int

    def summary(self) -> dict:
        return {
            "type": "summary",
            "n_queries": self.n_queries,
            "distractors": self.distractors,
            "seed": self.seed,
            "success_rate": {str(k): v for k, v in sorted(self.success_rate.items())},
            "mrr": self.mrr,
            "tie_break": TIE_BREAK,
        }

    def lines(self) -> list[str]:
        out = [json.dumps(self.summary(), sort_keys=True)]
        for r in self.results:
            out.append(json.dumps({"type": "query", "query_id": r.query_id, "frank": r.frank,
                                   "ranked": r.ranked, "scores": r.scores}, sort_keys=True))
        return out

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8", newline="\n")

    def table(self, name: str = "model") -> str:
        ks = sorted(self.success_rate)
        header = f"{'Model':<12}" + "".join(f"{'S@' + str(k):>8}" for k in ks) + f"{'MRR':>8}"
        row = f"{name:<12}" + "".join(f"{self.success_rate[k]:>8.3f}" for k in ks) + f"{self.mrr:>8.3f}"
        return header + "\n" + row


def read_report(path: str | Path) -> MetricsReport:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = json.loads(lines[0])
    results = []
    for line in lines[1:]:
        r = json.loads(line)
        results.append(RankingResult(r["query_id"], r["ranked"], r["frank"], r.get("scores", [])))
    return MetricsReport(head["n_queries"], {int(k): v for k, v in head["success_rate"].items()},
                         head["mrr"], results, head["distractors"], head["seed"])


def rank(query: CorpusEntry, candidates: Sequence[CorpusEntry], scorer: Scorer) -> RankingResult:
    """Rank candidates for ``query``; the correct candidate is the one sharing its id."""
    correct = [c for c in candidates if c.id == query.id]
    if len(correct) != 1:
        raise ContractError(f"query {query.id}: expected exactly one correct candidate, found {len(correct)}")
    scores = [float(s) for s in scorer(query.query, [c.code for c in candidates])]
    if len(scores) != len(candidates):
        raise ContractError("scorer returned the wrong number of scores")
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i].id))
    ranked = [candidates[i].id for i in order]
    return RankingResult(query.id, ranked, ranked.index(query.id) + 1, [scores[i] for i in order])


def _check(results):
    if not results:
        raise ContractError("metrics need at least one ranking result")


def success_rate_at_k(results: Sequence[RankingResult], k: int) -> float:
    """Fraction of queries whose first correct hit is within the top ``k``."""
    _check(results)
    if k < 1:
        raise ContractError("k must be >= 1")
    return sum(1 for r in results if r.frank <= k) / len(results)


def mrr(results: Sequence[RankingResult]) -> float:
    _check(results)
    return sum(1.0 / r.frank for r in results) / len(results)


def evaluate(scorer: Scorer, eval_corpus: Sequence[CorpusEntry], distractors: int = 99,
             ks: Sequence[int] = DEFAULT_KS, seed: int = 0) -> MetricsReport:
    """Rank every entry's code among ``distractors`` codes drawn from the other entries."""
    entries = list(eval_corpus)
    n = len(entries)
    if distractors < 0 or n < distractors + 1:
        raise ContractError(f"corpus of {n} entries cannot supply {distractors} distractors per query")
    rng = np.random.default_rng(seed)
    results = []
    for qi, entry in enumerate(entries):
        others = rng.choice(n - 1, size=distractors, replace=False)
        picks = [int(j) + (1 if j >= qi else 0) for j in others]
        candidates = [entry] + [entries[j] for j in picks]
        results.append(rank(entry, candidates, scorer))
    return MetricsReport(n, {k: success_rate_at_k(results, k) for k in ks}, mrr(results), results,
                         distractors, seed)


def oracle_scorer(corpus: Sequence[CorpusEntry]) -> Scorer:
    """Scores 1.0 for a (query, code) pair present in ``corpus``, else 0.0."""
    pairs = {(e.query, e.code) for e in corpus}

    def score(query: str, codes: Sequence[str]) -> list[float]:
        return [1.0 if (query, c) in pairs else 0.0 for c in codes]

    return score
