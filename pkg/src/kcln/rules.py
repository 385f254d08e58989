"""Preference-rule language.

A rule is a conjunction of attribute and relation atoms implying label
preferences for bound entities::

    HasWord(E1,'fat') & HasWord(E1,'obese') & Cites(E2,E1) => label(E2,type2)+

``+`` marks a preferred label, ``-`` a non-preferred one, and several heads
are separated by ``;``. Lines starting with ``#`` are comments. Each rule
occupies one line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

PREFER = "prefer"
AVOID = "avoid"


class RuleSyntaxError(ValueError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class AttrAtom:
    attr_name: str
    var: str
    value: str

    def feature_key(self) -> str:
        return f"{self.attr_name}:{self.value}"

    def __str__(self):
        return f"{self.attr_name}({self.var},'{self.value}')"


@dataclass(frozen=True)
class RelAtom:
    rel_name: str
    var1: str
    var2: str

    def __str__(self):
        return f"{self.rel_name}({self.var1},{self.var2})"


@dataclass(frozen=True)
class LabelPref:
    var: str
    label: str
    polarity: str

    def __str__(self):
        return f"label({self.var},{self.label}){'+' if self.polarity == PREFER else '-'}"


@dataclass(frozen=True)
class PreferenceRule:
    body_attrs: tuple
    body_rels: tuple
    heads: tuple
    source_line: int = field(default=0, compare=False)

    @property
    def variables(self) -> list[str]:
        seen = []
        for atom in self.body_attrs:
            if atom.var not in seen:
                seen.append(atom.var)
        for atom in self.body_rels:
            for v in (atom.var1, atom.var2):
                if v not in seen:
                    seen.append(v)
        return sorted(seen)

    def __str__(self):
        body = " & ".join(str(a) for a in (*self.body_attrs, *self.body_rels))
        return f"{body} => " + "; ".join(str(h) for h in self.heads)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple = ()

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __getitem__(self, k):
        return self.rules[k]

    def __str__(self):
        return "".join(f"{r}\n" for r in self.rules)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<arrow>=>)
  | (?P<name>[A-Za-z][A-Za-z0-9_]*)
  | (?P<string>'[^'\n]*')
  | (?P<punct>[(),&;+\-])
    """,
    re.VERBOSE,
)

_VAR_RE = re.compile(r"[A-Z][A-Za-z0-9_]*\Z")


@dataclass
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(line: str, line_no: int) -> list[_Token]:
    tokens, pos = [], 0
    while pos < len(line):
        if line[pos] == "#":
            break
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            if line[pos] == "'":
                raise RuleSyntaxError("unterminated string literal", line_no, pos + 1)
            raise RuleSyntaxError(f"unexpected character {line[pos]!r}", line_no, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(_Token("eol", "", len(line) + 1))
    return tokens


class _LineParser:
    def __init__(self, line: str, line_no: int):
        self.line_no = line_no
        self.tokens = _tokenize(line, line_no)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return RuleSyntaxError(message, self.line_no, tok.column)

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "string":
            found = tok.text or "end of line"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.pos += 1
        return tok

    def name(self, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != "name":
            raise self.error(f"expected {what}, found {tok.text or 'end of line'!r}")
        self.pos += 1
        return tok

    def variable(self) -> str:
        tok = self.name("variable")
        if not _VAR_RE.match(tok.text):
            raise self.error(f"variables must start with an uppercase letter: {tok.text!r}", tok)
        return tok.text

    def atom(self):
        pred = self.name("predicate name")
        self.expect("(")
        var = self.variable()
        self.expect(",")
        tok = self.peek()
        if tok.kind == "string":
            self.pos += 1
            result = AttrAtom(pred.text, var, tok.text[1:-1])
        elif tok.kind == "name":
            result = RelAtom(pred.text, var, self.variable())
        else:
            raise self.error("expected variable or quoted literal")
        self.expect(")")
        return result

    def head(self) -> LabelPref:
        tok = self.name("'label'")
        if tok.text != "label":
            raise self.error(f"expected 'label', found {tok.text!r}", tok)
        self.expect("(")
        var = self.variable()
        self.expect(",")
        label = self.name("label name").text
        self.expect(")")
        sign = self.peek()
        if sign.text not in ("+", "-") or sign.kind != "punct":
            raise self.error("expected '+' or '-' after label head")
        self.pos += 1
        return LabelPref(var, label, PREFER if sign.text == "+" else AVOID)

    def rule(self) -> PreferenceRule:
        attrs, rels = [], []
        while True:
            a = self.atom()
            (attrs if isinstance(a, AttrAtom) else rels).append(a)
            if self.peek().text == "&":
                self.pos += 1
                continue
            break
        arrow = self.peek()
        if arrow.kind != "arrow":
            raise self.error(f"expected '&' or '=>', found {arrow.text or 'end of line'!r}")
        self.pos += 1
        heads = [self.head()]
        while self.peek().text == ";":
            self.pos += 1
            heads.append(self.head())
        if self.peek().kind != "eol":
            raise self.error(f"unexpected {self.peek().text!r} after rule")
        rule = PreferenceRule(tuple(attrs), tuple(rels), tuple(heads), self.line_no)
        self._check_heads(rule)
        return rule

    def _check_heads(self, rule):
        bound = set(rule.variables)
        seen = set()
        for h in rule.heads:
            if h.var not in bound:
                raise RuleSyntaxError(f"head variable {h.var} is not bound in the rule body",
                                      self.line_no, 1)
            if (h.var, h.label) in seen:
                raise RuleSyntaxError(f"duplicate head for ({h.var}, {h.label})", self.line_no, 1)
            seen.add((h.var, h.label))


def parse_rules(text: str) -> RuleSet:
    """Parse advice text into a :class:`RuleSet`, preserving source order."""
    rules = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rules.append(_LineParser(line, line_no).rule())
    return RuleSet(tuple(rules))


def load_rules(path) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def format_rules(rules: RuleSet) -> str:
    return str(rules)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    kind: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.kind}: {self.message}"


def validate(rules: RuleSet, g) -> list[Diagnostic]:
    """Report names in ``rules`` that do not resolve against graph ``g``."""
    out = []
    for rule in rules:
        for a in rule.body_attrs:
            if a.feature_key() not in g.feature_vocab:
                out.append(Diagnostic(rule.source_line, "unknown-attribute",
                                      f"{a.feature_key()!r} is not in the feature vocabulary"))
        for a in rule.body_rels:
            if a.rel_name not in g.relations:
                out.append(Diagnostic(rule.source_line, "unknown-relation",
                                      f"relation {a.rel_name!r} does not occur in the graph"))
        for h in rule.heads:
            if h.label not in g.label_names:
                out.append(Diagnostic(rule.source_line, "unknown-label",
                                      f"label {h.label!r} is not one of {list(g.label_names)}"))
    return out
