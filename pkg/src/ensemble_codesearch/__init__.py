"""Multi-perspective semantic code search over Java methods.

Semantics-preserving rewrites (variable renaming, statement permutation and
a JVM API filter) build three training corpora. One pair-classifying encoder
is trained per corpus, and a small MLP over their concatenated hidden vectors
combines them. Rankings are scored with FRank, SuccessRate@k and MRR.
"""

from .code_model import parse_source, tokenize_source
from .corpus import CorpusEntry, build_perspective_dataset, ingest, split
from .encoder import TrainConfig, load_model, save_model, train
from .ensemble import load_ensemble, save_ensemble, train_ensemble
from .errors import (
    ArtifactError,
    CodeSearchError,
    ContractError,
    DivergenceError,
    IngestError,
    LexError,
    ParseError,
)
from .evaluation import evaluate, mrr, rank, success_rate_at_k
from .transforms import ApiCatalog, has_jvm_api_invocation, permute_statements, rename_variables

__version__ = "0.1.0"

__all__ = [
    "ApiCatalog",
    "ArtifactError",
    "CodeSearchError",
    "ContractError",
    "CorpusEntry",
    "DivergenceError",
    "IngestError",
    "LexError",
    "ParseError",
    "TrainConfig",
    "build_perspective_dataset",
    "evaluate",
    "has_jvm_api_invocation",
    "ingest",
    "load_ensemble",
    "load_model",
    "mrr",
    "parse_source",
    "permute_statements",
    "rank",
    "rename_variables",
    "save_ensemble",
    "save_model",
    "split",
    "success_rate_at_k",
    "tokenize_source",
    "train",
    "train_ensemble",
]
