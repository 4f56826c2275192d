"""Lexing and parsing of method-level Java snippets.

The parser covers the subset needed to rewrite methods safely: the method
signature, statement structure, and scope-aware resolution of local
variables. Expressions are not parsed into trees; they are scanned token by
token, which is enough to decide whether an identifier names an in-scope
local and whether that occurrence reads or writes it. Generics, lambdas and
anonymous classes are skipped over as opaque expression text.

Offsets are indices into the Python ``str`` holding the source.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import LexError, ParseError

KEYWORDS = frozenset(
    """abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package private
    protected public return short static strictfp super switch synchronized this
    throw throws transient try void volatile while""".split()
)
LITERAL_WORDS = frozenset({"true", "false", "null"})
PRIMITIVES = frozenset({"byte", "short", "char", "int", "long", "float", "double", "boolean", "void"})
MODIFIERS = frozenset(
    {"public", "private", "protected", "static", "final", "abstract", "synchronized",
     "native", "strictfp", "default", "transient", "volatile"}
)
ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="})
COMPOUND_ASSIGN_OPS = ASSIGN_OPS - {"="}

_OPERATORS = sorted(
    """>>>= <<= >>= >>> ... -> :: ++ -- && || == != <= >= += -= *= /= %= &= |= ^= << >>
    = + - * / % & | ^ ! ~ ? : < >""".split(),
    key=len,
    reverse=True,
)
_PUNCTUATION = set("(){}[];,.@")
DIGITS = frozenset("0123456789")
_WS_RE = re.compile(r"[ \t\r\n\f\v]+")
_NUMBER_RE = re.compile(
    r"0[xX][0-9a-fA-F_]*(?:\.[0-9a-fA-F_]*)?(?:[pP][+-]?\d+)?[lLfFdD]?"
    r"|0[bB][01_]+[lL]?"
    r"|(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d[\d_]*)?[fFdDlL]?"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def significant(self) -> bool:
        return self.kind not in ("whitespace", "comment")


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch in "_$"


def _is_ident_part(ch: str) -> bool:
    return ch.isalnum() or ch in "_$"


def tokenize_source(source: str) -> list[Token]:
    """Split ``source`` into tokens whose texts concatenate back to it exactly.

    Raises LexError on an unterminated string, char literal or block comment.
    """
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        start = i
        if ch in " \t\r\n\f\v":
            i = _WS_RE.match(source, i).end()
            kind = "whitespace"
        elif source.startswith("//", i):
            j = source.find("\n", i)
            i = n if j < 0 else j
            kind = "comment"
        elif source.startswith("/*", i):
            j = source.find("*/", i + 2)
            if j < 0:
                raise LexError("unterminated block comment", start)
            i = j + 2
            kind = "comment"
        elif source.startswith('"""', i):
            j = i + 3
            while True:
                j = source.find('"""', j)
                if j < 0:
                    raise LexError("unterminated text block", start)
                if source[j - 1] != "\\":
                    break
                j += 1
            i = j + 3
            kind = "literal"
        elif ch in "\"'":
            j = i + 1
            while j < n and source[j] != ch:
                if source[j] == "\\":
                    j += 1
                elif source[j] == "\n":
                    break
                j += 1
            if j >= n or source[j] != ch:
                raise LexError("unterminated string literal", start)
            i = j + 1
            kind = "literal"
        elif ch in DIGITS or (ch == "." and i + 1 < n and source[i + 1] in DIGITS):
            i = _NUMBER_RE.match(source, i).end()
            kind = "literal"
        elif _is_ident_start(ch):
            j = i + 1
            while j < n and _is_ident_part(source[j]):
                j += 1
            word = source[i:j]
            i = j
            if word in KEYWORDS:
                kind = "keyword"
            elif word in LITERAL_WORDS:
                kind = "literal"
            else:
                kind = "identifier"
        elif ch in _PUNCTUATION and not source.startswith("...", i):
            i += 1
            kind = "punctuation"
        else:
            for op in _OPERATORS:
                if source.startswith(op, i):
                    i += len(op)
                    kind = "operator"
                    break
            else:
                # stray characters (backslashes, '#', ...) are kept verbatim
                i += 1
                kind = "punctuation"
        tokens.append(Token(kind, source[start:i], start, i))
    return tokens


@dataclass
class VariableBinding:
    id: int
    original_name: str
    kind: str  # parameter | local | loop-variable
    declaration_site: tuple[int, int]
    occurrences: list[tuple[int, int]] = field(default_factory=list)
    token_indices: list[int] = field(default_factory=list)
    declared_type: str | None = None


@dataclass(frozen=True)
class Occurrence:
    token_index: int
    name: str
    binding: int | None
    role: str  # def | use | defuse


@dataclass
class StatementNode:
    kind: str  # expression | declaration | if | for | while | try | return | block | other
    span: tuple[int, int]
    token_range: tuple[int, int]
    seqs: list[list["StatementNode"]] = field(default_factory=list)

    @property
    def children(self) -> list["StatementNode"]:
        return [c for seq in self.seqs for c in seq]

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def shape(self):
        return (self.kind, tuple(tuple(c.shape() for c in seq) for seq in self.seqs))


@dataclass
class MethodAst:
    name: str
    params: list[int]
    body: StatementNode | None
    bindings: list[VariableBinding]
    source: str
    tokens: list[Token]
    occurrences: list[Occurrence]
    free_names: list[Occurrence]

    def statements(self) -> list[StatementNode]:
        """All statements in pre-order, excluding the body block itself."""
        if self.body is None:
            return []
        return list(self.body.walk())[1:]

    def shape(self):
        """Statement-kind tree plus binding kinds; ignores identifier spelling."""
        body = self.body.shape() if self.body is not None else None
        return body, tuple(b.kind for b in self.bindings), len(self.params)


@dataclass(frozen=True)
class DefUse:
    defs: frozenset[int]
    uses: frozenset[int]


@dataclass
class BasicBlock:
    statements: list[StatementNode]
    parent_span: tuple[int, int]


STRAIGHT_LINE_KINDS = frozenset({"expression", "declaration"})


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.sig = [i for i, t in enumerate(tokens) if t.significant]
        self.p = 0
        self.scopes: list[dict[str, int]] = [{}]
        self.bindings: list[VariableBinding] = []
        self.occurrences: list[Occurrence] = []
        self.free_names: list[Occurrence] = []

    # token access -----------------------------------------------------
    def tok(self, k: int = 0) -> Token | None:
        idx = self.p + k
        return self.tokens[self.sig[idx]] if 0 <= idx < len(self.sig) else None

    def text_at(self, idx: int) -> str | None:
        return self.tokens[self.sig[idx]].text if 0 <= idx < len(self.sig) else None

    def kind_at(self, idx: int) -> str | None:
        return self.tokens[self.sig[idx]].kind if 0 <= idx < len(self.sig) else None

    def text(self, k: int = 0) -> str | None:
        return self.text_at(self.p + k)

    def error(self, message: str) -> ParseError:
        t = self.tok()
        offset = t.start if t is not None else (self.tokens[-1].end if self.tokens else 0)
        return ParseError(message, offset)

    def expect(self, text: str) -> None:
        if self.text() != text:
            raise self.error(f"expected {text!r}, found {self.text()!r}")
        self.p += 1

    # types ------------------------------------------------------------
    def skip_annotation(self, q: int) -> int:
        q += 1  # '@'
        if self.kind_at(q) != "identifier":
            return q
        q += 1
        while self.text_at(q) == "." and self.kind_at(q + 1) == "identifier":
            q += 2
        if self.text_at(q) == "(":
            q = self.match_close(q)
        return q

    def skip_modifiers(self, q: int) -> int:
        while True:
            t = self.text_at(q)
            if t in MODIFIERS:
                q += 1
            elif t == "@" and self.text_at(q + 1) != "interface":
                q = self.skip_annotation(q)
            else:
                return q

    def match_close(self, q: int) -> int:
        """Index just past the bracket that closes the one at ``q``."""
        depth = 0
        while q < len(self.sig):
            t = self.text_at(q)
            if t in ("(", "[", "{"):
                depth += 1
            elif t in (")", "]", "}"):
                depth -= 1
                if depth == 0:
                    return q + 1
            q += 1
        raise ParseError("unbalanced brackets", self.tokens[-1].end)

    def skip_type_args(self, q: int) -> int | None:
        depth = 0
        while q < len(self.sig):
            t = self.text_at(q)
            k = self.kind_at(q)
            if t in ("<", ">", ">>", ">>>"):
                depth += t.count("<") - t.count(">")
                if depth < 0:
                    return None
                q += 1
                if depth == 0:
                    return q
            elif t == "@":
                q = self.skip_annotation(q)
            elif k == "identifier" or t in (",", ".", "?", "&", "[", "]", "extends", "super") or t in PRIMITIVES:
                q += 1
            else:
                return None
        return None

    def parse_type(self, q: int) -> int | None:
        """Index just past a type starting at ``q``, or None if none starts there."""
        while self.text_at(q) == "@":
            q = self.skip_annotation(q)
        t = self.text_at(q)
        if t in PRIMITIVES:
            q += 1
        elif self.kind_at(q) == "identifier":
            q += 1
            while True:
                if self.text_at(q) == "<":
                    q = self.skip_type_args(q)
                    if q is None:
                        return None
                if self.text_at(q) == "." and self.kind_at(q + 1) == "identifier":
                    q += 2
                    continue
                break
        else:
            return None
        while self.text_at(q) == "[" and self.text_at(q + 1) == "]":
            q += 2
        return q

    def type_name(self, start: int, end: int) -> str:
        """Simple name of the type spanning sig[start:end], with ``[]`` for arrays."""
        name = None
        depth = 0
        for q in range(start, end):
            t = self.text_at(q)
            if t in ("<", ">", ">>", ">>>"):
                depth += t.count("<") - t.count(">")
            elif depth == 0 and (self.kind_at(q) == "identifier" or t in PRIMITIVES):
                name = t
        if name is None:
            return ""
        if self.text_at(end - 1) == "]" or self.text_at(end) == "...":
            name += "[]"
        return name

    def is_declaration(self, q: int, terminators=("=", ";", ",", "[")) -> bool:
        q = self.skip_modifiers(q)
        if self.text_at(q) == "yield" and self.text_at(q + 1) not in ("=", "[", "."):
            return False
        t = self.parse_type(q)
        return t is not None and self.kind_at(t) == "identifier" and self.text_at(t + 1) in terminators

    # scopes and identifiers ------------------------------------------
    def push(self) -> None:
        self.scopes.append({})

    def pop(self) -> None:
        self.scopes.pop()

    def lookup(self, name: str) -> int | None:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def declare(self, q: int, kind: str, declared_type: str | None) -> int:
        tok_index = self.sig[q]
        tok = self.tokens[tok_index]
        bid = len(self.bindings)
        self.bindings.append(
            VariableBinding(bid, tok.text, kind, tok.span, [tok.span], [tok_index], declared_type)
        )
        self.scopes[-1][tok.text] = bid
        self.occurrences.append(Occurrence(tok_index, tok.text, bid, "def"))
        return bid

    def role(self, q: int) -> str:
        if self.text_at(q - 1) in ("++", "--"):
            return "defuse"
        j = q + 1
        chained = False
        while True:
            t = self.text_at(j)
            if t == "." and self.kind_at(j + 1) == "identifier" and self.text_at(j + 2) != "(":
                j += 2
            elif t == "[":
                j = self.match_close(j)
            else:
                break
            chained = True
        op = self.text_at(j)
        if op in ("++", "--") or op in COMPOUND_ASSIGN_OPS:
            return "defuse"
        if op == "=":
            return "defuse" if chained else "def"
        return "use"

    def visit_identifier(self, q: int) -> None:
        prev, nxt = self.text_at(q - 1), self.text_at(q + 1)
        if prev in (".", "::") or nxt in ("(", "->"):
            return
        tok_index = self.sig[q]
        name = self.tokens[tok_index].text
        bid = self.lookup(name)
        if bid is None:
            self.free_names.append(Occurrence(tok_index, name, None, self.role(q)))
            return
        b = self.bindings[bid]
        b.occurrences.append(self.tokens[tok_index].span)
        b.token_indices.append(tok_index)
        self.occurrences.append(Occurrence(tok_index, name, bid, self.role(q)))

    def scan(self, stops: tuple[str, ...]) -> None:
        """Resolve identifiers up to (not including) a stop token at depth 0."""
        depth = 0
        while True:
            t = self.text()
            if t is None:
                raise self.error("unexpected end of input")
            if depth == 0 and t in stops:
                return
            if t in ("(", "[", "{"):
                depth += 1
            elif t in (")", "]", "}"):
                if depth == 0:
                    raise self.error(f"unbalanced {t!r}")
                depth -= 1
            elif self.kind_at(self.p) == "identifier":
                self.visit_identifier(self.p)
            self.p += 1

    def scan_parens(self) -> None:
        self.expect("(")
        self.scan((")",))
        self.p += 1

    # statements -------------------------------------------------------
    def node(self, kind: str, start: int, seqs=None) -> StatementNode:
        first, last = self.sig[start], self.sig[self.p - 1]
        span = (self.tokens[first].start, self.tokens[last].end)
        return StatementNode(kind, span, (first, last + 1), seqs or [])

    def parse_block(self) -> StatementNode:
        start = self.p
        self.expect("{")
        self.push()
        stmts = []
        while self.text() != "}":
            if self.text() is None:
                raise self.error("unbalanced '{'")
            stmts.append(self.parse_statement())
        self.p += 1
        self.pop()
        return self.node("block", start, [stmts])

    def parse_substatement(self) -> StatementNode:
        self.push()
        try:
            return self.parse_statement()
        finally:
            self.pop()

    def parse_declarators(self, kind: str, type_start: int, type_end: int, terminators=(";",)) -> None:
        declared = self.type_name(type_start, type_end)
        while True:
            if self.kind_at(self.p) != "identifier":
                raise self.error("expected variable name")
            name_q = self.p
            self.p += 1
            dims = ""
            while self.text() == "[" and self.text(1) == "]":
                self.p += 2
                dims = "[]"
            self.declare(name_q, kind, declared + dims if dims and not declared.endswith("[]") else declared)
            if self.text() == "=":
                self.p += 1
                self.scan((",",) + terminators)
            if self.text() == ",":
                self.p += 1
                continue
            if self.text() in terminators:
                return
            raise self.error("malformed declaration")

    def parse_local_declaration(self, kind: str, terminators=(";",)) -> None:
        self.p = self.skip_modifiers(self.p)
        type_start = self.p
        self.p = self.parse_type(self.p)
        self.parse_declarators(kind, type_start, self.p, terminators)

    def parse_statement(self) -> StatementNode:
        start = self.p
        t = self.text()
        k = self.kind_at(self.p)
        if t is None:
            raise self.error("unexpected end of input")
        if t == "{":
            return self.parse_block()
        if t == ";":
            self.p += 1
            return self.node("other", start)
        if t == "if":
            self.p += 1
            self.scan_parens()
            seqs = [[self.parse_substatement()]]
            if self.text() == "else":
                self.p += 1
                seqs.append([self.parse_substatement()])
            return self.node("if", start, seqs)
        if t == "for":
            return self.parse_for(start)
        if t == "while":
            self.p += 1
            self.scan_parens()
            return self.node("while", start, [[self.parse_substatement()]])
        if t == "do":
            self.p += 1
            body = self.parse_substatement()
            self.expect("while")
            self.scan_parens()
            self.expect(";")
            return self.node("while", start, [[body]])
        if t == "try":
            return self.parse_try(start)
        if t == "switch":
            return self.parse_switch(start)
        if t in ("return", "throw", "assert") or (t == "yield" and self.text(1) not in ("=", "[", ".")
                                                 and self.kind_at(self.p + 1) != "identifier"):
            self.p += 1
            self.scan((";",))
            self.p += 1
            return self.node("return" if t == "return" else "other", start)
        if t in ("break", "continue"):
            self.p += 1
            if self.kind_at(self.p) == "identifier":
                self.p += 1
            self.expect(";")
            return self.node("other", start)
        if t == "synchronized" and self.text(1) == "(":
            self.p += 1
            self.scan_parens()
            return self.node("other", start, [[self.parse_block()]])
        if k == "identifier" and self.text(1) == ":":
            self.p += 2
            return self.node("other", start, [[self.parse_substatement()]])
        q = self.skip_modifiers(self.p)
        if self.text_at(q) in ("class", "interface", "enum") or (
            self.text_at(q) == "record" and self.kind_at(q + 1) == "identifier"
        ):
            self.p = q
            self.scan(("{",))
            end = self.match_close(self.p)
            while self.p < end:
                if self.kind_at(self.p) == "identifier":
                    self.visit_identifier(self.p)
                self.p += 1
            return self.node("other", start)
        if self.is_declaration(self.p):
            self.parse_local_declaration("local")
            self.p += 1
            return self.node("declaration", start)
        self.scan((";",))
        self.p += 1
        return self.node("expression", start)

    def parse_for(self, start: int) -> StatementNode:
        self.p += 1
        self.expect("(")
        self.push()
        if self.is_declaration(self.p, terminators=(":",)):
            self.p = self.skip_modifiers(self.p)
            type_start = self.p
            self.p = self.parse_type(self.p)
            self.declare(self.p, "loop-variable", self.type_name(type_start, self.p))
            self.p += 1
            self.expect(":")
            self.scan((")",))
        else:
            if self.is_declaration(self.p):
                self.parse_local_declaration("loop-variable")
            else:
                self.scan((";",))
            self.expect(";")
            self.scan((";",))
            self.expect(";")
            self.scan((")",))
        self.expect(")")
        body = self.parse_substatement()
        self.pop()
        return self.node("for", start, [[body]])

    def parse_try(self, start: int) -> StatementNode:
        self.p += 1
        self.push()
        has_resources = False
        if self.text() == "(":
            has_resources = True
            self.p += 1
            while self.text() != ")":
                if self.is_declaration(self.p, terminators=("=",)):
                    self.parse_local_declaration("local", terminators=(";", ")"))
                else:
                    self.scan((";", ")"))
                if self.text() == ";":
                    self.p += 1
            self.p += 1
        seqs = [[self.parse_block()]]
        self.pop()
        while self.text() == "catch":
            self.p += 1
            self.expect("(")
            self.push()
            self.p = self.skip_modifiers(self.p)
            type_start = self.p
            end = self.parse_type(self.p)
            if end is None:
                raise self.error("malformed catch clause")
            self.p = end
            first_type = self.type_name(type_start, end)
            while self.text() == "|":
                end = self.parse_type(self.p + 1)
                if end is None:
                    raise self.error("malformed catch clause")
                self.p = end
            if self.kind_at(self.p) != "identifier":
                raise self.error("expected catch parameter")
            self.declare(self.p, "local", first_type)
            self.p += 1
            self.expect(")")
            seqs.append([self.parse_block()])
            self.pop()
        if self.text() == "finally":
            self.p += 1
            seqs.append([self.parse_block()])
        if len(seqs) == 1 and not has_resources:
            raise self.error("try without catch or finally")
        return self.node("try", start, seqs)

    def parse_switch(self, start: int) -> StatementNode:
        self.p += 1
        self.scan_parens()
        self.expect("{")
        self.push()
        groups: list[list[StatementNode]] = []
        current = None
        while self.text() != "}":
            if self.text() is None:
                raise self.error("unbalanced '{'")
            if self.text() in ("case", "default"):
                self.p += 1
                self.scan((":", "->"))
                if self.text() == "->":
                    self.p += 1
                    groups.append([self.parse_substatement()])
                    current = None
                else:
                    self.p += 1
                    current = []
                    groups.append(current)
                continue
            if current is None:
                current = []
                groups.append(current)
            current.append(self.parse_statement())
        self.p += 1
        self.pop()
        return self.node("other", start, groups)

    # method -----------------------------------------------------------
    def parse_method(self, source: str) -> MethodAst:
        if not self.sig:
            raise ParseError("empty snippet", 0)
        name = ""
        params: list[int] = []
        if self.text() != "{":
            self.p = self.skip_modifiers(self.p)
            if self.text() == "<":
                self.p = self.skip_type_args(self.p)
                if self.p is None:
                    raise ParseError("malformed type parameters", 0)
                self.p = self.skip_modifiers(self.p)
            if self.text() in ("class", "interface", "enum", "@", "package", "import"):
                raise self.error("unsupported top-level construct")
            if not (self.kind_at(self.p) == "identifier" and self.text(1) == "("):
                end = self.parse_type(self.p)
                if end is None:
                    raise self.error("expected return type")
                self.p = end
            if self.kind_at(self.p) != "identifier" or self.text(1) != "(":
                raise self.error("expected method name")
            name = self.text()
            self.p += 2
            params = self.parse_params()
            while self.text() == "[" and self.text(1) == "]":
                self.p += 2
            if self.text() == "throws":
                self.p += 1
                while True:
                    end = self.parse_type(self.p)
                    if end is None:
                        raise self.error("malformed throws clause")
                    self.p = end
                    if self.text() != ",":
                        break
                    self.p += 1
        body = None
        if self.text() == ";":
            self.p += 1
        else:
            if self.text() != "{":
                raise self.error("expected method body")
            body = self.parse_block()
        if self.p != len(self.sig):
            raise self.error("trailing tokens after method")
        return MethodAst(name, params, body, self.bindings, source, self.tokens,
                         self.occurrences, self.free_names)

    def parse_params(self) -> list[int]:
        params = []
        while self.text() != ")":
            self.p = self.skip_modifiers(self.p)
            type_start = self.p
            end = self.parse_type(self.p)
            if end is None:
                raise self.error("malformed parameter")
            self.p = end
            varargs = self.text() == "..."
            if varargs:
                self.p += 1
            if self.text() == "this":
                self.p += 1
            else:
                if self.kind_at(self.p) != "identifier":
                    raise self.error("expected parameter name")
                declared = self.type_name(type_start, end)
                if varargs and not declared.endswith("[]"):
                    declared += "[]"
                params.append(self.declare(self.p, "parameter", declared))
                self.p += 1
                while self.text() == "[" and self.text(1) == "]":
                    self.p += 2
            if self.text() == ",":
                self.p += 1
            elif self.text() != ")":
                raise self.error("malformed parameter list")
        self.p += 1
        return params


def parse_method(tokens: list[Token], source: str | None = None) -> MethodAst:
    """Parse the tokens of one method declaration (or a bare ``{...}`` body)."""
    if source is None:
        source = "".join(t.text for t in tokens)
    return _Parser(tokens).parse_method(source)


def parse_source(source: str) -> MethodAst:
    return parse_method(tokenize_source(source), source)


def print_method(ast: MethodAst) -> str:
    return "".join(t.text for t in ast.tokens)


def def_use(statement: StatementNode, ast: MethodAst) -> DefUse:
    lo, hi = statement.token_range
    defs, uses = set(), set()
    for occ in ast.occurrences:
        if lo <= occ.token_index < hi:
            if occ.role in ("def", "defuse"):
                defs.add(occ.binding)
            if occ.role in ("use", "defuse"):
                uses.add(occ.binding)
    return DefUse(frozenset(defs), frozenset(uses))


def basic_blocks(ast: MethodAst) -> list[BasicBlock]:
    """Maximal runs of sibling expression/declaration statements, in source order."""
    blocks: list[BasicBlock] = []

    def visit(node: StatementNode) -> None:
        for seq in node.seqs:
            run: list[StatementNode] = []
            for stmt in seq:
                if stmt.kind in STRAIGHT_LINE_KINDS:
                    run.append(stmt)
                    continue
                if run:
                    blocks.append(BasicBlock(run, node.span))
                    run = []
                visit(stmt)
            if run:
                blocks.append(BasicBlock(run, node.span))

    if ast.body is not None:
        visit(ast.body)
    return blocks
