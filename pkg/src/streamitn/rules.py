"""Rewrite-rule language and its compilation to ITN and TN transducers.

A rule file is a list of definitions::

    # comment
    hour   = "one":"1" | "two":"2" | "twelve":"12" ;
    minute = "oh":"0" digit | teen ;
    root   = hour "":":" minute ("a m":" am" | "p m":" pm")? ;

``"lex":"wri"`` maps a lexical (spoken) string to a written one; either side
may be empty, giving deletions and insertions. A bare ``"x"`` maps ``x`` to
itself. Sequences are juxtaposition, ``|`` separates branches, ``?`` makes
an item optional, and ``*{n}``/``+{n}`` repeat up to ``n`` times. A branch
may carry ``@cost`` (lower is preferred) and ``~alt``, which marks it as
interchangeable with the other ``~alt`` branches of the same alternation
when generating training data.

Lexical strings are split on spaces into word symbols; written strings are
split into characters, so written output is glued without separators and a
literal space in a written string starts a new display token.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping as MappingType, Union

from . import fst as F
from .errors import FormatError, PackError, RuleReferenceError, RuleSyntaxError

ROOT = "root"


# ---------------------------------------------------------------------------
# syntax tree


@dataclass(frozen=True)
class Mapping:
    lexical: str
    written: str


@dataclass(frozen=True)
class Sequence:
    children: tuple


@dataclass(frozen=True)
class Branch:
    expr: "RuleExpr"
    weight: float = 0.0
    alt: bool = False


@dataclass(frozen=True)
class Alternation:
    branches: tuple


@dataclass(frozen=True)
class Quantified:
    child: "RuleExpr"
    op: str  # one of ? * +
    bound: int | None = None


@dataclass(frozen=True)
class RuleRef:
    name: str


RuleExpr = Union[Mapping, Sequence, Alternation, Quantified, RuleRef]


@dataclass
class RuleSet:
    category: str
    rules: dict[str, RuleExpr]
    root: str = ROOT
    library: MappingType[str, RuleExpr] = field(default_factory=dict, repr=False)

    def lookup(self, name: str) -> RuleExpr:
        if name in self.rules:
            return self.rules[name]
        return self.library[name]


# ---------------------------------------------------------------------------
# lexer / parser

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<alt>~alt\b)
  | (?P<punct>[=;|():?*+{}@])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str, filename: str | None) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if not m:
            raise RuleSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1, filename)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


def _unquote(text: str) -> str:
    return json.loads(text)


def _quote(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


class _Parser:
    def __init__(self, source: str, filename: str | None):
        self.toks = _tokenize(source, filename)
        self.i = 0
        self.filename = filename

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return RuleSyntaxError(msg, tok.line, tok.col, self.filename)

    def take(self, text=None, kind=None) -> _Tok:
        tok = self.peek()
        if (text is not None and tok.text != text) or (kind is not None and tok.kind != kind):
            want = text or kind
            got = tok.text or "end of input"
            raise self.error(f"expected {want!r}, found {got!r}")
        self.i += 1
        return tok

    def at(self, text) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == text

    def definitions(self) -> tuple[dict, dict]:
        rules, where = {}, {}
        while self.peek().kind != "eof":
            name_tok = self.take(kind="name")
            if name_tok.text in rules:
                raise self.error(f"rule {name_tok.text!r} defined twice", name_tok)
            self.take("=")
            rules[name_tok.text] = self.alternation()
            where[name_tok.text] = name_tok
            self.take(";")
        return rules, where

    def alternation(self) -> RuleExpr:
        branches = [self.branch()]
        while self.at("|"):
            self.take("|")
            branches.append(self.branch())
        if len(branches) == 1 and branches[0].weight == 0.0 and not branches[0].alt:
            return branches[0].expr
        return Alternation(tuple(branches))

    def branch(self) -> Branch:
        expr = self.sequence()
        weight, alt = 0.0, False
        while True:
            if self.at("@"):
                self.take("@")
                weight = float(self.take(kind="number").text)
            elif self.peek().kind == "alt":
                self.take(kind="alt")
                alt = True
            else:
                break
        return Branch(expr, weight, alt)

    def sequence(self) -> RuleExpr:
        items = []
        while True:
            tok = self.peek()
            if tok.kind in ("string", "name") or (tok.kind == "punct" and tok.text == "("):
                items.append(self.item())
            else:
                break
        if not items:
            raise self.error("expected a rule expression")
        return items[0] if len(items) == 1 else Sequence(tuple(items))

    def item(self) -> RuleExpr:
        expr = self.atom()
        if self.at("?"):
            self.take("?")
            return Quantified(expr, "?")
        if self.at("*") or self.at("+"):
            op = self.take().text
            if not self.at("{"):
                raise self.error(f"'{op}' needs a repetition bound like {op}{{10}}")
            self.take("{")
            bound_tok = self.take(kind="number")
            if not bound_tok.text.isdigit() or int(bound_tok.text) < 1:
                raise self.error("repetition bound must be a positive integer", bound_tok)
            self.take("}")
            return Quantified(expr, op, int(bound_tok.text))
        return expr

    def atom(self) -> RuleExpr:
        tok = self.peek()
        if tok.kind == "string":
            self.take()
            lex = _unquote(tok.text)
            if self.at(":"):
                self.take(":")
                wri = _unquote(self.take(kind="string").text)
            else:
                wri = lex
            return Mapping(lex, wri)
        if tok.kind == "name":
            self.take()
            return RuleRef(tok.text)
        self.take("(")
        expr = self.alternation()
        self.take(")")
        return expr


def _refs(expr: RuleExpr):
    if isinstance(expr, RuleRef):
        yield expr.name
    elif isinstance(expr, Sequence):
        for c in expr.children:
            yield from _refs(c)
    elif isinstance(expr, Alternation):
        for b in expr.branches:
            yield from _refs(b.expr)
    elif isinstance(expr, Quantified):
        yield from _refs(expr.child)


def _check_references(rules: MappingType[str, RuleExpr], env: MappingType[str, RuleExpr], root: str | None,
                      filename: str | None = None, where=None):
    for name, expr in rules.items():
        for ref in _refs(expr):
            if ref not in env:
                loc = ""
                if where and name in where:
                    loc = f" (line {where[name].line})"
                raise RuleReferenceError(f"{filename + ': ' if filename else ''}rule {name!r}{loc} "
                                         f"references undefined rule {ref!r}")
    # cycle detection over the whole environment reachable from these rules
    state: dict[str, int] = {}

    def visit(name, trail):
        mark = state.get(name)
        if mark == 2:
            return
        if mark == 1:
            cycle = trail[trail.index(name):] + [name]
            raise RuleReferenceError(f"{filename + ': ' if filename else ''}cyclic rule reference: "
                                     + " -> ".join(cycle))
        state[name] = 1
        for ref in _refs(env[name]):
            visit(ref, trail + [name])
        state[name] = 2

    for name in rules:
        visit(name, [])


def parse_library(source: str, filename: str | None = None) -> dict[str, RuleExpr]:
    """Parse a shared rule library (no root required)."""
    rules, where = _Parser(source, filename).definitions()
    _check_references(rules, rules, None, filename, where)
    return rules


def parse_rules(source: str, category: str = "default", library: MappingType[str, RuleExpr] | None = None,
                filename: str | None = None) -> RuleSet:
    """Parse and validate one category's rules.

    ``library`` holds rules shared between categories; a category may not
    redefine a library rule.
    """
    library = dict(library or {})
    rules, where = _Parser(source, filename).definitions()
    for name in rules:
        if name in library:
            raise RuleReferenceError(f"{filename + ': ' if filename else ''}rule {name!r} "
                                     "redefines a library rule")
    if ROOT not in rules:
        raise RuleReferenceError(f"{filename + ': ' if filename else ''}no {ROOT!r} rule defined")
    env = {**library, **rules}
    _check_references(rules, env, ROOT, filename, where)
    return RuleSet(category=category, rules=rules, library=library)


# ---------------------------------------------------------------------------
# pretty printing


def format_expr(expr: RuleExpr, parent: str = "top") -> str:
    if isinstance(expr, Mapping):
        if expr.lexical == expr.written:
            return _quote(expr.lexical)
        return f"{_quote(expr.lexical)}:{_quote(expr.written)}"
    if isinstance(expr, RuleRef):
        return expr.name
    if isinstance(expr, Sequence):
        text = " ".join(format_expr(c, "seq") for c in expr.children)
        return f"({text})" if parent == "quant" else text
    if isinstance(expr, Quantified) and parent == "quant":
        return f"({format_expr(expr)})"
    if isinstance(expr, Alternation):
        parts = []
        for b in expr.branches:
            part = format_expr(b.expr, "alt")
            if b.weight:
                part += f" @{b.weight!r}"
            if b.alt:
                part += " ~alt"
            parts.append(part)
        text = " | ".join(parts)
        return text if parent == "top" else f"({text})"
    if isinstance(expr, Quantified):
        suffix = expr.op if expr.op == "?" else f"{expr.op}{{{expr.bound}}}"
        return format_expr(expr.child, "quant") + suffix
    raise TypeError(f"not a rule expression: {expr!r}")


def format_rules(rs: RuleSet) -> str:
    return "".join(f"{name} = {format_expr(expr)} ;\n" for name, expr in rs.rules.items())


# ---------------------------------------------------------------------------
# compilation


def open_tag(category: str) -> str:
    return f"<{category}>"


def close_tag(category: str) -> str:
    return f"</{category}>"


def is_marker(symbol: str) -> bool:
    return symbol.startswith("<~")


class _Compiler:
    """Builds lexical->written machines; one instance per (rule set, marker mode)."""

    def __init__(self, rs: RuleSet, syms: F.SymbolTable, markers: bool):
        self.rs = rs
        self.syms = syms
        self.markers = markers
        self.memo: dict[str, F.Fst] = {}

    def rule(self, name: str) -> F.Fst:
        f = self.memo.get(name)
        if f is None:
            self.counter = 0
            f = F.optimize(self.expr(self.rs.lookup(name), name))
            self.memo[name] = f
        return f

    def expr(self, e: RuleExpr, scope: str) -> F.Fst:
        syms = self.syms
        if isinstance(e, Mapping):
            words = [syms.add(w) for w in e.lexical.split()]
            chars = [syms.add(c) for c in e.written]
            return F.string_pair(words, chars, syms)
        if isinstance(e, RuleRef):
            saved = getattr(self, "counter", 0)
            f = self.rule(e.name)
            self.counter = saved
            return f
        if isinstance(e, Sequence):
            out = self.expr(e.children[0], scope)
            for c in e.children[1:]:
                out = F.concat(out, self.expr(c, scope))
            return out
        if isinstance(e, Alternation):
            self.counter += 1
            node = f"{scope}.{self.counter}"
            parts = []
            for b in e.branches:
                f = self.expr(b.expr, scope)
                if b.alt and self.markers:
                    begin = syms.add(f"<~alt:{self.rs.category}.{node}>")
                    end = syms.add(f"<~/alt:{self.rs.category}.{node}>")
                    f = F.concat(F.concat(F.string_pair([begin], [], syms), f), F.string_pair([end], [], syms))
                if b.weight:
                    f = F.concat(F.epsilon_machine(syms, weight=b.weight), f)
                parts.append(f)
            return F.union(parts)
        if isinstance(e, Quantified):
            child = self.expr(e.child, scope)
            eps = F.epsilon_machine(syms)
            if e.op == "?":
                return F.union([child, eps])
            reps = e.bound if e.op == "*" else e.bound - 1
            tail = eps
            for _ in range(reps):
                tail = F.union([eps, F.concat(child, tail)])
            return F.concat(child, tail) if e.op == "+" else tail
        raise TypeError(f"not a rule expression: {e!r}")


def compile_core(rs: RuleSet, syms: F.SymbolTable, markers: bool = False) -> F.Fst:
    """Lexical -> written machine without category tags."""
    return _Compiler(rs, syms, markers).rule(rs.root)


def _wrap(core: F.Fst, rs: RuleSet, syms: F.SymbolTable) -> F.Fst:
    begin = F.string_pair([syms.add(open_tag(rs.category))], [], syms)
    end = F.string_pair([syms.add(close_tag(rs.category))], [], syms)
    return F.optimize(F.concat(F.concat(begin, core), end))


def compile_itn(rs: RuleSet, syms: F.SymbolTable) -> F.Fst:
    """Tag-consuming ITN machine: ``<cat> lexical </cat>`` -> written."""
    return _wrap(compile_core(rs, syms), rs, syms)


def compile_tn(rs: RuleSet, syms: F.SymbolTable) -> F.Fst:
    """Tag-outputting TN machine: written -> ``<cat> lexical </cat>``.

    Branches annotated ``~alt`` are bracketed on the output side by
    ``<~alt:...>`` / ``<~/alt:...>`` marker symbols; strip them with
    :func:`strip_markers` to get the plain mirror image of :func:`compile_itn`.
    """
    return F.invert(_wrap(compile_core(rs, syms, markers=True), rs, syms))


def strip_markers(f: F.Fst) -> F.Fst:
    """Replace alternate-branch marker symbols on the output side by epsilon."""
    omap = {f.osyms.find(s): 0 for s in f.osyms if is_marker(s)}
    return F.optimize(F.relabel(f, omap=omap)) if omap else f


# ---------------------------------------------------------------------------
# grammar packs


@dataclass
class GrammarPack:
    """All categories of one locale, compiled in both directions over one symbol table."""

    syms: F.SymbolTable
    categories: list[str]
    itn: dict[str, F.Fst]
    tn: dict[str, F.Fst]
    core: dict[str, F.Fst]
    rulesets: dict[str, RuleSet] = field(default_factory=dict)

    def __len__(self):
        return len(self.categories)

    def open_tag(self, category: str) -> str:
        return open_tag(category)

    def close_tag(self, category: str) -> str:
        return close_tag(category)


def build_pack(rulesets: MappingType[str, RuleSet], syms: F.SymbolTable | None = None) -> GrammarPack:
    syms = syms or F.SymbolTable()
    cats = sorted(rulesets)
    for cat in cats:
        syms.add(open_tag(cat))
        syms.add(close_tag(cat))
    itn, tn, core = {}, {}, {}
    for cat in cats:
        rs = rulesets[cat]
        core[cat] = compile_core(rs, syms)
        itn[cat] = _wrap(core[cat], rs, syms)
        tn[cat] = compile_tn(rs, syms)
    return GrammarPack(syms, cats, itn, tn, core, dict(rulesets))


def load_pack(directory: str | Path, syms: F.SymbolTable | None = None) -> GrammarPack:
    """Parse every ``<category>.rules`` file in ``directory`` and compile both directions.

    Files whose name starts with ``_`` are shared libraries visible to every
    category. Errors from all files are collected before raising.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise PackError(f"grammar pack directory not found: {directory}")
    errors: list[str] = []
    library: dict[str, RuleExpr] = {}
    for path in sorted(directory.glob("_*.rules")):
        try:
            lib = parse_library(path.read_text(encoding="utf-8"), filename=path.name)
        except (RuleSyntaxError, RuleReferenceError) as exc:
            errors.append(str(exc))
            continue
        for name in lib:
            if name in library:
                errors.append(f"{path.name}: library rule {name!r} defined in more than one file")
        library.update(lib)
    rulesets: dict[str, RuleSet] = {}
    files = [p for p in sorted(directory.glob("*.rules")) if not p.name.startswith("_")]
    if not files:
        raise PackError(f"no categories found in {directory}")
    for path in files:
        cat = path.stem.lower()
        if cat in rulesets:
            errors.append(f"{path.name}: duplicate category {cat!r}")
            continue
        try:
            rulesets[cat] = parse_rules(path.read_text(encoding="utf-8"), cat, library, filename=path.name)
        except (RuleSyntaxError, RuleReferenceError) as exc:
            errors.append(str(exc))
    if errors:
        raise PackError(f"{len(errors)} error(s) loading grammar pack {directory}", errors)
    return build_pack(rulesets, syms)


def starter_pack_dir() -> Path:
    return Path(__file__).parent / "grammars"


def load_starter_pack() -> GrammarPack:
    return load_pack(starter_pack_dir())


MANIFEST = "manifest.json"


def save_pack(pack: GrammarPack, directory: str | Path) -> Path:
    """Persist compiled machines (one file per category and direction) plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for cat in pack.categories:
        files = {}
        for kind, table in (("itn", pack.itn), ("tn", pack.tn), ("core", pack.core)):
            name = f"{cat}.{kind}.fst"
            (directory / name).write_bytes(F.dumps(table[cat]))
            files[kind] = name
        entry = {"category": cat, "open_tag": open_tag(cat), "close_tag": close_tag(cat), **files}
        if cat in pack.rulesets:
            entry["rules"] = format_rules(pack.rulesets[cat])
        entries.append(entry)
    manifest = {"format": "streamitn-pack", "version": 1, "categories": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def load_compiled_pack(directory: str | Path) -> GrammarPack:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PackError(f"no {MANIFEST} in {directory}") from None
    if manifest.get("format") != "streamitn-pack":
        raise FormatError(f"{directory / MANIFEST} is not a grammar pack manifest")
    syms = None
    cats, itn, tn, core = [], {}, {}, {}
    for entry in manifest["categories"]:
        cat = entry["category"]
        cats.append(cat)
        for kind, table in (("itn", itn), ("tn", tn), ("core", core)):
            f = F.loads((directory / entry[kind]).read_bytes(), syms)
            if syms is None:
                syms = f.isyms
            elif f.isyms is not syms or f.osyms is not syms:
                raise FormatError(f"{entry[kind]}: symbol table differs from the rest of the pack")
            table[cat] = f
    return GrammarPack(syms or F.SymbolTable(), cats, itn, tn, core)


def open_pack(path: str | Path) -> GrammarPack:
    """Load either a rules directory or a compiled pack directory."""
    path = Path(path)
    if (path / MANIFEST).exists():
        return load_compiled_pack(path)
    return load_pack(path)
