"""Semantics-preserving rewrites of parsed methods and JVM API detection.

Three generators feed the perspective datasets:

* ``rename_variables`` replaces every local variable and parameter with
  ``var0``, ``var1``, ... so a learner cannot lean on naming.
* ``permute_statements`` swaps two statements of a basic block that share no
  local def/use, so a learner cannot lean on statement order.
* ``has_jvm_api_invocation`` selects snippets calling into the Java standard
  library.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .code_model import (
    BasicBlock,
    MethodAst,
    StatementNode,
    Token,
    basic_blocks,
    def_use,
    parse_source,
    tokenize_source,
)
from .errors import ContractError


def source_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


# renaming ---------------------------------------------------------------

def natural_key(name: str):
    """Sort key comparing digit runs numerically, so var2 sorts before var10."""
    return tuple(int(part) if i % 2 else part for i, part in enumerate(re.split(r"(\d+)", name)))


@dataclass
class RenameMap:
    entries: dict[int, str]
    originals: dict[int, str]
    token_indices: dict[int, list[int]]

    @property
    def identity(self) -> bool:
        return all(self.entries[b] == self.originals[b] for b in self.entries)

    def as_names(self) -> dict[str, str]:
        """original -> fresh, for display; ambiguous when two bindings share a name."""
        return {self.originals[b]: self.entries[b] for b in sorted(self.entries)}


@dataclass
class TransformRecord:
    kind: str  # rename | permute
    input_hash: str
    output_source: str
    metadata: RenameMap | dict = field(default_factory=dict)

    def to_json(self) -> dict:
        if isinstance(self.metadata, RenameMap):
            meta = {"rename": {str(b): [self.metadata.originals[b], self.metadata.entries[b]]
                               for b in sorted(self.metadata.entries)}}
        else:
            meta = dict(self.metadata)
        return {"kind": self.kind, "input_hash": self.input_hash,
                "output_hash": source_hash(self.output_source), "metadata": meta}


def _rewrite(tokens: list[Token], replacements: dict[int, str]) -> str:
    return "".join(replacements.get(i, t.text) for i, t in enumerate(tokens))


def rename_variables(ast: MethodAst, order: str = "lexicographic") -> tuple[MethodAst, RenameMap]:
    """Rename every local binding to ``varN``.

    ``order`` picks which binding gets the smallest index: ``lexicographic``
    sorts by original name (digit runs compared numerically, ties by
    declaration position); ``declaration`` uses declaration position.
    """
    if order == "lexicographic":
        ranked = sorted(ast.bindings, key=lambda b: (natural_key(b.original_name), b.id))
    elif order == "declaration":
        ranked = list(ast.bindings)
    else:
        raise ContractError(f"unknown rename order {order!r}")

    bound_tokens = {i for b in ast.bindings for i in b.token_indices}
    taken = {t.text for i, t in enumerate(ast.tokens) if t.kind == "identifier" and i not in bound_tokens}
    entries: dict[int, str] = {}
    counter = 0
    for b in ranked:
        while f"var{counter}" in taken:
            counter += 1
        entries[b.id] = f"var{counter}"
        counter += 1

    rename_map = RenameMap(
        entries,
        {b.id: b.original_name for b in ast.bindings},
        {b.id: list(b.token_indices) for b in ast.bindings},
    )
    if rename_map.identity:
        return ast, rename_map
    replacements = {i: entries[b.id] for b in ast.bindings for i in b.token_indices}
    return parse_source(_rewrite(ast.tokens, replacements)), rename_map


def invert_rename(renamed_source: str, rename_map: RenameMap) -> str:
    """Undo ``rename_variables`` using only its output and the RenameMap."""
    tokens = tokenize_source(renamed_source)
    replacements = {}
    for b, indices in rename_map.token_indices.items():
        for i in indices:
            if tokens[i].text != rename_map.entries[b]:
                raise ContractError(f"token {i} is {tokens[i].text!r}, expected {rename_map.entries[b]!r}")
            replacements[i] = rename_map.originals[b]
    return _rewrite(tokens, replacements)


# permutation ------------------------------------------------------------

def _declared_names(stmt: StatementNode, ast: MethodAst) -> set[str]:
    lo, hi = stmt.token_range
    return {b.original_name for b in ast.bindings if lo <= b.token_indices[0] < hi}


def _free_names(stmt: StatementNode, ast: MethodAst) -> set[str]:
    lo, hi = stmt.token_range
    return {o.name for o in ast.free_names if lo <= o.token_index < hi}


def _block_of(stmt: StatementNode, blocks: list[BasicBlock]) -> tuple[int, int] | None:
    for bi, block in enumerate(blocks):
        for si, s in enumerate(block.statements):
            if s is stmt:
                return bi, si
    return None


def independent(s1: StatementNode, s2: StatementNode, ast: MethodAst, conservative: bool = False,
                _check: bool = True) -> bool:
    """True when neither statement defines a local the other defines or reads.

    A local declared by one statement also conflicts with a same-named
    unbound identifier in the other, since reordering would change what that
    name resolves to. With ``conservative`` any shared unbound variable-like
    name (a field, typically) is a conflict too.
    """
    if _check:
        blocks = basic_blocks(ast)
        p1, p2 = _block_of(s1, blocks), _block_of(s2, blocks)
        if p1 is None or p2 is None or p1[0] != p2[0] or p1[1] >= p2[1]:
            raise ContractError("statements must share a basic block, first before second")
    du1, du2 = def_use(s1, ast), def_use(s2, ast)
    if (du1.defs & du2.uses) or (du1.uses & du2.defs) or (du1.defs & du2.defs):
        return False
    free1, free2 = _free_names(s1, ast), _free_names(s2, ast)
    if (_declared_names(s1, ast) & free2) or (_declared_names(s2, ast) & free1):
        return False
    if conservative:
        shared = {n for n in free1 & free2 if not n[:1].isupper()}
        if shared:
            return False
    return True


def _swap_source(tokens: list[Token], r1: tuple[int, int], r2: tuple[int, int]) -> str:
    (a1, b1), (a2, b2) = r1, r2
    parts = tokens[:a1] + tokens[a2:b2] + tokens[b1:a2] + tokens[a1:b1] + tokens[b2:]
    return "".join(t.text for t in parts)


def swappable_pairs(ast: MethodAst, adjacent_only: bool = True, conservative: bool = False
                    ) -> list[tuple[StatementNode, StatementNode]]:
    """Every statement pair that may be exchanged, in source order.

    Non-adjacent pairs additionally require both statements to be
    independent of everything between them.
    """
    pairs = []
    for block in basic_blocks(ast):
        stmts = block.statements
        for i in range(len(stmts)):
            for j in range(i + 1, len(stmts) if not adjacent_only else min(i + 2, len(stmts))):
                if not independent(stmts[i], stmts[j], ast, conservative, _check=False):
                    continue
                between = stmts[i + 1:j]
                if all(independent(stmts[i], m, ast, conservative, _check=False)
                       and independent(m, stmts[j], ast, conservative, _check=False) for m in between):
                    pairs.append((stmts[i], stmts[j]))
    return pairs


def mixed_seed(seed: int, source: str) -> int:
    digest = hashlib.sha256(f"{seed}\0{source}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def permute_statements(ast: MethodAst, rng_seed: int, *, all_variants: bool = False,
                       adjacent_only: bool = True, conservative: bool = False,
                       max_variants: int = 1) -> list[tuple[MethodAst, TransformRecord]]:
    """Variants of ``ast`` with one pair of independent statements exchanged.

    By default one eligible pair is drawn with a generator seeded from
    ``rng_seed`` and the snippet text; ``all_variants`` returns one variant
    per eligible pair.
    """
    pairs = swappable_pairs(ast, adjacent_only, conservative)
    if not pairs:
        return []
    if not all_variants:
        rng = random.Random(mixed_seed(rng_seed, ast.source))
        chosen = sorted(rng.sample(range(len(pairs)), min(max_variants, len(pairs))))
        pairs = [pairs[k] for k in chosen]
    order = {id(s): k for k, s in enumerate(ast.statements())}
    digest = source_hash(ast.source)
    out = []
    for s1, s2 in pairs:
        text = _swap_source(ast.tokens, s1.token_range, s2.token_range)
        record = TransformRecord("permute", digest, text,
                                 {"swapped": [order[id(s1)], order[id(s2)]],
                                  "token_ranges": [list(s1.token_range), list(s2.token_range)]})
        out.append((parse_source(text), record))
    return out


# JVM API detection -------------------------------------------------------

@dataclass
class ApiCatalog:
    package_prefixes: frozenset[str]
    known_types: dict[str, str]
    known_static_entry_points: frozenset[str]

    @classmethod
    def from_text(cls, text: str) -> "ApiCatalog":
        prefixes, types, statics = set(), {}, set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "prefix" and len(parts) == 2:
                prefixes.add(parts[1])
            elif parts[0] == "type" and len(parts) == 3:
                name, package = parts[1], parts[2]
                if types.get(name, package) != package:
                    raise ContractError(f"line {lineno}: {name} mapped to both {types[name]} and {package}")
                types[name] = package
            elif parts[0] == "static" and len(parts) == 2 and "." in parts[1]:
                statics.add(parts[1])
            else:
                raise ContractError(f"line {lineno}: malformed catalog record {raw!r}")
        return cls(frozenset(prefixes), types, frozenset(statics))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ApiCatalog":
        if path is None:
            text = resources.files("ensemble_codesearch").joinpath("data/jvm_api.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_text(text)

    def canonical_text(self) -> str:
        lines = [f"prefix {p}" for p in sorted(self.package_prefixes)]
        lines += [f"type {n} {self.known_types[n]}" for n in sorted(self.known_types)]
        lines += [f"static {s}" for s in sorted(self.known_static_entry_points)]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return source_hash(self.canonical_text())

    def is_jvm_qualified(self, dotted: str) -> bool:
        return any(dotted.startswith(p) for p in self.package_prefixes)


def _field_types(ast: MethodAst, sig: list[int], catalog: ApiCatalog) -> dict[str, str]:
    """Types of unbound names assigned from ``new T(...)`` or ``T.getInstance(...)``."""
    pos = {tok_index: k for k, tok_index in enumerate(sig)}
    text = lambda k: ast.tokens[sig[k]].text if 0 <= k < len(sig) else None
    types = {}
    for occ in ast.free_names:
        if occ.role != "def":
            continue
        k = pos[occ.token_index]
        if text(k + 1) != "=":
            continue
        if text(k + 2) == "new" and text(k + 3) in catalog.known_types:
            types[occ.name] = text(k + 3)
        elif text(k + 2) in catalog.known_types and text(k + 3) == "." and text(k + 4) == "getInstance":
            types[occ.name] = text(k + 2)
    return types


def has_jvm_api_invocation(ast_or_tokens: MethodAst | list[Token], catalog: ApiCatalog
                           ) -> tuple[bool, list[str]]:
    """Detect calls into the JVM standard library.

    Matches qualified names under a catalog package prefix, static calls and
    constructions of catalog types, and (given a parsed method) calls on
    locals whose declared type is a catalog type. Raw tokens get the
    token-level checks only.
    """
    if isinstance(ast_or_tokens, MethodAst):
        ast = ast_or_tokens
        tokens = ast.tokens
    else:
        ast = None
        tokens = ast_or_tokens
    sig = [i for i, t in enumerate(tokens) if t.significant]
    text = lambda k: tokens[sig[k]].text if 0 <= k < len(sig) else None
    kind = lambda k: tokens[sig[k]].kind if 0 <= k < len(sig) else None

    bound_type: dict[int, str] = {}
    inferred: dict[str, str] = {}
    if ast is not None:
        for b in ast.bindings:
            if b.declared_type:
                for i in b.token_indices:
                    bound_type[i] = b.declared_type
        inferred = _field_types(ast, sig, catalog)
    bound_tokens = {i for b in ast.bindings for i in b.token_indices} if ast is not None else set()

    matched: list[str] = []

    def hit(name: str) -> None:
        if name not in matched:
            matched.append(name)

    for k in range(len(sig)):
        if kind(k) != "identifier" or text(k - 1) in (".", "::"):
            continue
        names = [text(k)]
        j = k + 1
        while text(j) == "." and kind(j + 1) == "identifier":
            names.append(text(j + 1))
            j += 2
        dotted = ".".join(names)
        root = names[0]
        is_call = text(j) == "("
        if len(names) >= 2 and catalog.is_jvm_qualified(dotted):
            hit(dotted)
            continue
        if text(k - 1) == "new" and root in catalog.known_types:
            hit(f"new {root}")
            continue
        if sig[k] in bound_tokens:
            declared = bound_type.get(sig[k], "")
            if len(names) >= 2 and is_call and declared in catalog.known_types:
                hit(dotted)
            continue
        if len(names) >= 2 and is_call and (root in catalog.known_types
                                           or f"{root}.{names[1]}" in catalog.known_static_entry_points):
            hit(dotted)
        elif text(j) == "::" and root in catalog.known_types and kind(j + 1) == "identifier":
            hit(f"{root}::{text(j + 1)}")
        elif len(names) >= 2 and is_call and root in inferred:
            hit(dotted)
    return bool(matched), matched
