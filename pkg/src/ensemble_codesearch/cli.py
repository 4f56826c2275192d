"""``ecsearch``: command-line pipeline from raw corpus to ranked search results.

Every command writes a run manifest (``<output>.run.json``) next to its
primary output, or prints it to stderr when there is no output file. Options
may be collected in a flags file and passed as ``@path``.

Exit codes: 0 success, 2 usage, 3 I/O or artifact failure, 4 contract
violation, 5 training divergence. Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from . import encoder as enc
from . import ensemble as ens
from .corpus import (
    PERSPECTIVES,
    AugmentOptions,
    build_perspective_dataset,
    ingest,
    original_pairs,
    read_dataset,
    split,
    write_corpus,
    write_dataset,
)
from .errors import ArtifactError, CodeSearchError, ContractError, DivergenceError, IngestError
from .evaluation import DEFAULT_KS, evaluate, oracle_scorer
from .transforms import ApiCatalog

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT, EXIT_DIVERGENCE = 0, 2, 3, 4, 5

log = logging.getLogger("ensemble_codesearch")


@dataclass
class RunManifest:
    command: str
    flags: dict
    seeds: dict
    input_hashes: dict = field(default_factory=dict)
    artifact_hashes: dict = field(default_factory=dict)
    tool_version: str = __version__
    duration_seconds: float = 0.0
    argv: list[str] = field(default_factory=list)


def path_hash(path: str | Path) -> str:
    path = Path(path)
    if path.is_dir():
        return enc.artifact_hash(path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


# shared option groups -------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = enc.TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    g.add_argument("--clip-norm", type=float, default=d.clip_norm, help="0 disables clipping")
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--hidden-dim", type=int, default=d.hidden_dim)
    g.add_argument("--pooling", choices=enc.POOLINGS, default=d.pooling)
    g.add_argument("--max-len", type=int, default=d.max_len)
    g.add_argument("--min-frequency", type=float, default=d.min_frequency)
    g.add_argument("--freeze-embeddings", action="store_true")


def _train_config(args) -> enc.TrainConfig:
    min_freq = args.min_frequency
    if min_freq != float("inf") and min_freq == int(min_freq):
        min_freq = int(min_freq)
    return enc.TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, optimizer=args.optimizer,
                           clip_norm=args.clip_norm or None, seed=args.seed, hidden_dim=args.hidden_dim,
                           pooling=args.pooling, max_len=args.max_len, min_frequency=min_freq,
                           freeze_embeddings=args.freeze_embeddings)


def load_scorer(artifact: str | Path):
    """(scorer, kind) for an encoder or ensemble artifact directory."""
    manifest = enc.read_manifest(artifact)
    if manifest.get("type") == "ensemble":
        model = ens.load_ensemble(artifact)
        return (lambda q, cs: ens.ensemble_score_batch(model, q, cs)), "ensemble"
    model = enc.load_model(artifact)
    return (lambda q, cs: enc.score_batch(model, q, cs)), model.perspective or "encoder"


# commands ----------------------------------------------------------------------
# Each returns the RunManifest pieces it knows about: (seeds, inputs, outputs).

def cmd_ingest(args):
    corpus = ingest(args.input)
    write_corpus(corpus, args.output)
    print(f"entries\t{len(corpus)}\nskipped\t{corpus.skipped}\nduplicates\t{corpus.duplicates}")
    return {}, [args.input], [args.output]


def cmd_split(args):
    corpus = ingest(args.corpus)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, part in zip(("train", "valid", "test"), split(corpus, tuple(args.ratios), args.seed)):
        path = out / f"{name}.jsonl"
        write_corpus(part, path)
        paths.append(path)
        print(f"{name}\t{len(part)}")
    return {"seed": args.seed}, [args.corpus], paths


def cmd_augment(args):
    corpus = ingest(args.corpus)
    catalog = ApiCatalog.load(args.catalog)
    if args.perspective == "original":
        dataset = original_pairs(corpus, args.seed)
        extra = {}
    else:
        options = AugmentOptions(args.rename_order, args.all_variants, not args.non_adjacent, args.conservative,
                                 args.variants_per_entry)
        dataset = build_perspective_dataset(corpus, args.perspective, args.seed, catalog, options, args.workers)
        extra = {"transform_flags": asdict(options)}
    extra["catalog_sha256"] = catalog.hash()
    manifest = write_dataset(dataset, args.output, extra)
    print(f"perspective\t{dataset.perspective}\nexamples\t{len(dataset.examples)}\n"
          f"positives\t{dataset.positives}\nsha256\t{manifest['sha256']}")
    inputs = [args.corpus] + ([args.catalog] if args.catalog else [])
    return {"seed": args.seed}, inputs, [args.output, args.output + ".manifest.json"]


def _maybe_loss_figure(args, curves):
    if args.figure:
        from .report import plot_loss_curves

        plot_loss_curves(curves, args.figure)
        return [args.figure]
    return []


def cmd_train(args):
    dataset = read_dataset(args.dataset)
    model = enc.train(dataset, _train_config(args))
    digest = enc.save_model(model, args.output)
    print(f"artifact\t{digest}\nfinal_loss\t{model.loss_curve[-1]:.6f}")
    figs = _maybe_loss_figure(args, {dataset.perspective: model.loss_curve})
    return {"seed": args.seed}, [args.dataset], [args.output, *figs]


def cmd_train_ensemble(args):
    members = [enc.load_model(m) for m in args.members]
    dataset = read_dataset(args.dataset)
    roles = args.roles or [m.perspective or f"member{i}" for i, m in enumerate(members)]
    model = ens.train_ensemble(members, dataset, _train_config(args), freeze_members=not args.finetune_members,
                               roles=roles, mlp_hidden=args.mlp_hidden)
    source_hashes = [enc.artifact_hash(m) for m in args.members]
    digest = ens.save_ensemble(model, args.output, source_hashes)
    print(f"artifact\t{digest}\nfinal_loss\t{model.loss_curve[-1]:.6f}")
    figs = _maybe_loss_figure(args, {"ensemble": model.loss_curve})
    return {"seed": args.seed}, [*args.members, args.dataset], [args.output, *figs]


def cmd_eval(args):
    corpus = ingest(args.corpus)
    if args.oracle:
        scorer, name = oracle_scorer(corpus), "oracle"
    else:
        scorer, name = load_scorer(args.artifact)
    distractors = len(corpus) - 1 if args.exhaustive else args.distractors
    report = evaluate(scorer, corpus, distractors, tuple(args.ks), args.seed)
    print(report.table(args.name or name))
    outputs = []
    if args.report:
        report.write(args.report)
        outputs.append(args.report)
    if args.figure:
        from .report import plot_frank_histogram

        plot_frank_histogram(report, args.figure, args.name or name)
        outputs.append(args.figure)
    inputs = [args.corpus] + ([args.artifact] if args.artifact else [])
    return {"seed": args.seed}, inputs, outputs


def _search_once(scorer, corpus, query: str, top: int, as_json: bool, out) -> None:
    codes = [e.code for e in corpus]
    scores = []
    for start in range(0, len(codes), 512):
        scores.extend(float(s) for s in scorer(query, codes[start : start + 512]))
    order = sorted(range(len(codes)), key=lambda i: (-scores[i], corpus[i].id))[:top]
    for r, i in enumerate(order, 1):
        e = corpus[i]
        if as_json:
            out.write(json.dumps({"rank": r, "score": scores[i], "id": e.id, "code": e.code}, sort_keys=True) + "\n")
        else:
            out.write(f"{r}\t{scores[i]:.6f}\t{e.id}\n")
            out.write("".join(f"    {line}\n" for line in e.code.splitlines()) + "\n")
    out.flush()


def cmd_search(args):
    corpus = ingest(args.corpus)
    scorer, _ = load_scorer(args.artifact)
    if args.top < 1:
        raise ContractError("--top must be >= 1")
    if args.query is not None:
        _search_once(scorer, corpus, args.query, args.top, args.json, sys.stdout)
    else:
        interactive = sys.stdin.isatty()
        while True:
            if interactive:
                sys.stdout.write("query> ")
                sys.stdout.flush()
            line = sys.stdin.readline()
            if not line or not line.strip():
                break
            _search_once(scorer, corpus, line.strip(), args.top, args.json, sys.stdout)
    return {}, [args.artifact, args.corpus], []


def cmd_benchmark(args):
    from .benchmark import BENCHMARK_CONFIG, bundled_corpus_path, run_benchmark, write_benchmark

    corpus_path = args.corpus or bundled_corpus_path()
    entries = ingest(corpus_path).entries
    config = {k: v for k, v in (("lr", args.lr), ("epochs", args.epochs), ("hidden_dim", args.hidden_dim))
              if v is not None}
    result = run_benchmark(entries, args.seeds, args.distractors, config)
    table = result.metric_table()
    metrics = list(next(iter(table.values())))
    print("model\t" + "\t".join(metrics))
    for name, row in table.items():
        print(name + "\t" + "\t".join(f"{row[m]:.3f}" for m in metrics))
    for criterion, (ok, detail) in result.criteria().items():
        print(f"{'PASS' if ok else 'FAIL'}\t{criterion}\t{detail}")
    written = write_benchmark(result, args.out_dir, figures=not args.no_figures)
    seeds = {"seeds": list(args.seeds), "config": {**BENCHMARK_CONFIG, **config}}
    return seeds, [corpus_path], written


def cmd_synth(args):
    from .synthetic import generate_corpus

    entries = generate_corpus(args.n_per_family, args.seed, args.prefix, args.n_total)
    write_corpus(entries, args.output)
    print(f"entries\t{len(entries)}")
    return {"seed": args.seed}, [], [args.output]


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecsearch", fromfile_prefix_chars="@",
                                     description="Multi-perspective Java code search pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--run-manifest", help="where to write the run manifest")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalise a line-delimited JSON corpus")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_ingest, primary="output")

    p = sub.add_parser("split", help="seeded train/valid/test partition")
    p.add_argument("corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split, primary="out_dir")

    p = sub.add_parser("augment", help="build a perspective pair dataset")
    p.add_argument("corpus")
    p.add_argument("--perspective", choices=(*PERSPECTIVES, "original"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--all-variants", action="store_true", help="emit every swappable pair, not one")
    p.add_argument("--non-adjacent", action="store_true", help="allow swaps of non-adjacent statements")
    p.add_argument("--conservative", action="store_true", help="also treat shared free names as dependencies")
    p.add_argument("--rename-order", choices=("lexicographic", "declaration"), default="lexicographic")
    p.add_argument("--variants-per-entry", type=int, default=1)
    p.add_argument("--catalog", help="JVM API catalog file (default: bundled)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_augment, primary="output")

    p = sub.add_parser("train", help="train one perspective encoder")
    p.add_argument("dataset")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--figure", help="write the loss curve PNG here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train, primary="output")

    p = sub.add_parser("train-ensemble", help="train the MLP head over member encoders")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--roles", nargs="+")
    p.add_argument("--dataset", required=True, help="unaugmented pair dataset")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--finetune-members", action="store_true")
    p.add_argument("--mlp-hidden", type=int)
    p.add_argument("--figure", help="write the loss curve PNG here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_ensemble, primary="output")

    p = sub.add_parser("eval", help="rank each query among distractors and report metrics")
    p.add_argument("corpus")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--artifact")
    who.add_argument("--oracle", action="store_true", help="perfect scorer built from the corpus itself")
    p.add_argument("--distractors", type=int, default=99)
    p.add_argument("--exhaustive", action="store_true", help="rank against every other entry")
    p.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="per-query JSONL report")
    p.add_argument("--figure", help="FRank histogram PNG")
    p.add_argument("--name", help="row label in the printed table")
    p.set_defaults(func=cmd_eval, primary="report")

    p = sub.add_parser("search", help="rank corpus snippets for a query (REPL without --query)")
    p.add_argument("artifact")
    p.add_argument("corpus")
    p.add_argument("--query")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--json", action="store_true", help="one JSON object per hit")
    p.set_defaults(func=cmd_search, primary=None)

    p = sub.add_parser("benchmark", help="members vs ensemble over several seeds")
    p.add_argument("--corpus", help="default: bundled 600-entry synthetic corpus")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--distractors", type=int, default=49)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_benchmark, primary="out_dir")

    p = sub.add_parser("synth", help="generate a planted-signal corpus")
    p.add_argument("--n-per-family", type=int, default=200)
    p.add_argument("--n-total", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="syn")
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_synth, primary="output")
    return parser


def _error(kind: str, code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(exc)}) + "\n")
    return code


def _write_run_manifest(args, manifest: RunManifest) -> None:
    target = args.run_manifest
    primary = getattr(args, args.primary) if args.primary else None
    if target is None and primary:
        target = str(Path(primary)).rstrip("/") + ".run.json"
    text = json.dumps(asdict(manifest), indent=2, sort_keys=True, default=str)
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        Path(target).write_text(text + "\n", encoding="utf-8", newline="\n")
    else:
        sys.stderr.write("run-manifest " + json.dumps(asdict(manifest), sort_keys=True, default=str) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func: Callable = args.func
    start = time.perf_counter()
    try:
        seeds, inputs, outputs = func(args)
        flags = {k: v for k, v in vars(args).items() if k not in ("func", "primary")}
        manifest = RunManifest(
            command=args.command,
            flags=flags,
            seeds=seeds,
            input_hashes={str(p): path_hash(p) for p in inputs if p},
            artifact_hashes={str(p): path_hash(p) for p in outputs if p and Path(p).exists()},
            duration_seconds=round(time.perf_counter() - start, 3),
            argv=argv,
        )
        _write_run_manifest(args, manifest)
    except DivergenceError as exc:
        return _error("divergence", EXIT_DIVERGENCE, exc)
    except (IngestError, ArtifactError, OSError, json.JSONDecodeError) as exc:
        return _error("io", EXIT_IO, exc)
    except (CodeSearchError, ValueError) as exc:
        return _error("contract", EXIT_CONTRACT, exc)
    except KeyboardInterrupt:
        return 130
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
