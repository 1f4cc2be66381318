"""Boolean lexical-query language used to seed and filter example corpora.

Grammar (keywords and predicate names are case-insensitive)::

    expr      := term (OR term)*
    term      := factor (AND factor)*
    factor    := NOT factor | "(" expr ")" | predicate
    predicate := token(ARG) | ngram(ARG) | lexicon(ARG, ARG) | pronoun(ARG)
    ARG       := "double quoted" | 'single quoted' | bare_word

Example: ``lexicon(liwc, negemo) AND NOT pronoun("first")``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .core import Lexicon, tokenize
from .exceptions import ParseError, QueryEvaluationError

FIRST_PERSON = frozenset(
    {"i", "me", "my", "mine", "myself", "we", "us", "our", "ours", "ourselves"}
)

_KEYWORDS = {"AND", "OR", "NOT"}


def _quote(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass(frozen=True)
class TokenPred:
    word: str

    def evaluate(self, tokens, lexicons):
        return self.word in tokens

    def __str__(self):
        return f"token({_quote(self.word)})"


@dataclass(frozen=True)
class NgramPred:
    words: tuple[str, ...]

    def evaluate(self, tokens, lexicons):
        n = len(self.words)
        return any(tuple(tokens[i : i + n]) == self.words for i in range(len(tokens) - n + 1))

    def __str__(self):
        return f"ngram({_quote(' '.join(self.words))})"


@dataclass(frozen=True)
class LexiconPred:
    lexicon: str
    category: str

    def evaluate(self, tokens, lexicons):
        lex = lexicons.get(self.lexicon)
        if lex is None:
            raise QueryEvaluationError(f"lexicon {self.lexicon!r} is not loaded")
        if self.category not in lex.categories:
            raise QueryEvaluationError(f"lexicon {self.lexicon!r} has no category {self.category!r}")
        return any(lex.matches(self.category, t) for t in tokens)

    def __str__(self):
        return f"lexicon({_quote(self.lexicon)},{_quote(self.category)})"


@dataclass(frozen=True)
class PronounPred:
    person: str = "first"

    def evaluate(self, tokens, lexicons):
        return any(t in FIRST_PERSON for t in tokens)

    def __str__(self):
        return f"pronoun({_quote(self.person)})"


@dataclass(frozen=True)
class Not:
    child: "Node"

    def evaluate(self, tokens, lexicons):
        return not self.child.evaluate(tokens, lexicons)

    def __str__(self):
        return f"NOT({self.child})"


@dataclass(frozen=True)
class And:
    children: tuple

    def evaluate(self, tokens, lexicons):
        return all(c.evaluate(tokens, lexicons) for c in self.children)

    def __str__(self):
        return "AND(" + ",".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class Or:
    children: tuple

    def evaluate(self, tokens, lexicons):
        return any(c.evaluate(tokens, lexicons) for c in self.children)

    def __str__(self):
        return "OR(" + ",".join(str(c) for c in self.children) + ")"


Node = Union[TokenPred, NgramPred, LexiconPred, PronounPred, Not, And, Or]


@dataclass(frozen=True)
class _Tok:
    kind: str  # WORD, STRING, LPAREN, RPAREN, COMMA, EOF
    value: str
    line: int
    column: int


def _lex(text: str) -> list[_Tok]:
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch.isspace():
            advance()
            continue
        start_line, start_col = line, col
        if ch in "(),":
            kind = {"(": "LPAREN", ")": "RPAREN", ",": "COMMA"}[ch]
            toks.append(_Tok(kind, ch, start_line, start_col))
            advance()
        elif ch in "\"'":
            quote = ch
            advance()
            buf = []
            while True:
                if i >= n:
                    raise ParseError("unterminated string", start_line, start_col)
                c = text[i]
                if c == "\\" and i + 1 < n:
                    buf.append(text[i + 1])
                    advance(2)
                    continue
                if c == quote:
                    advance()
                    break
                buf.append(c)
                advance()
            toks.append(_Tok("STRING", "".join(buf), start_line, start_col))
        elif ch.isalnum() or ch in "_-*":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_-*"):
                j += 1
            toks.append(_Tok("WORD", text[i:j], start_line, start_col))
            advance(j - i)
        else:
            raise ParseError(f"unexpected character {ch!r}", start_line, start_col)
    toks.append(_Tok("EOF", "", line, col))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _lex(text)
        self.pos = 0

    @property
    def cur(self):
        return self.toks[self.pos]

    def error(self, msg, tok=None):
        tok = tok or self.cur
        return ParseError(msg, tok.line, tok.column)

    def is_keyword(self, word):
        return self.cur.kind == "WORD" and self.cur.value.upper() == word

    def expect(self, kind, what):
        if self.cur.kind != kind:
            found = "end of input" if self.cur.kind == "EOF" else repr(self.cur.value)
            raise self.error(f"expected {what}, found {found}")
        tok = self.cur
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.cur.kind != "EOF":
            raise self.error(f"unexpected {self.cur.value!r} after complete expression")
        return node

    def expr(self):
        terms = [self.term()]
        while self.is_keyword("OR"):
            self.pos += 1
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def term(self):
        factors = [self.factor()]
        while self.is_keyword("AND"):
            self.pos += 1
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else And(tuple(factors))

    def factor(self):
        if self.is_keyword("NOT"):
            self.pos += 1
            return Not(self.factor())
        if self.cur.kind == "LPAREN":
            self.pos += 1
            node = self.expr()
            self.expect("RPAREN", "')'")
            return node
        return self.predicate()

    def args(self):
        self.expect("LPAREN", "'('")
        out = []
        while True:
            tok = self.cur
            if tok.kind not in ("STRING", "WORD"):
                raise self.error("expected a predicate argument")
            out.append((tok.value, tok))
            self.pos += 1
            if self.cur.kind == "COMMA":
                self.pos += 1
                continue
            self.expect("RPAREN", "')' or ','")
            return out

    def predicate(self):
        tok = self.cur
        if tok.kind != "WORD" or tok.value.upper() in _KEYWORDS:
            found = "end of input" if tok.kind == "EOF" else repr(tok.value)
            raise self.error(f"expected a predicate, found {found}")
        name = tok.value.lower()
        if name not in ("token", "ngram", "lexicon", "pronoun"):
            raise self.error(f"unknown predicate {tok.value!r}")
        self.pos += 1
        args = self.args()
        arity = {"token": 1, "ngram": 1, "lexicon": 2, "pronoun": 1}[name]
        if len(args) != arity:
            raise self.error(f"{name} takes {arity} argument(s), got {len(args)}", tok)
        if name == "token":
            words = tokenize(args[0][0])
            if len(words) != 1:
                raise self.error("token() needs exactly one word; use ngram() for phrases", args[0][1])
            return TokenPred(words[0])
        if name == "ngram":
            words = tokenize(args[0][0])
            if not words:
                raise self.error("ngram() needs at least one word", args[0][1])
            return NgramPred(tuple(words))
        if name == "lexicon":
            return LexiconPred(args[0][0], args[1][0])
        if args[0][0].lower() != "first":
            raise self.error("pronoun() supports only 'first'", args[0][1])
        return PronounPred("first")


def parse_query(text: str) -> Node:
    """Parse a query string into an expression tree; ``str(tree)`` is canonical."""
    return _Parser(text).parse()


def eval_query(query, text: str, lexicons: Mapping[str, Lexicon] | None = None) -> bool:
    if isinstance(query, str):
        query = parse_query(query)
    return bool(query.evaluate(tokenize(text), lexicons or {}))


def filter_texts(query, texts: Sequence[str], lexicons=None) -> list[bool]:
    if isinstance(query, str):
        query = parse_query(query)
    return [eval_query(query, t, lexicons) for t in texts]
