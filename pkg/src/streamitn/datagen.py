"""Tagger training data from written text via the tag-outputting TN machines.

Each written sentence is scanned left to right. At every position the
longest token span accepted by any category's TN machine is verbalized;
competing verbalizations are ranked by FST cost and an n-gram score of the
surrounding lexical context, and interchangeable (``~alt``) variants are
drawn pseudorandomly from a per-sentence seed.
"""
from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import fst as F
from . import ngram
from .errors import FormatError
from .rules import GrammarPack, is_marker

BLANK = "blank"
MAX_WRITTEN_TOKENS = 8
MAX_LEXICAL_TOKENS = 10
NBEST = 64

_TAG_RE = re.compile(r"^<(/?)([A-Za-z][\w]*)>$")


def begin_tag(category: str) -> str:
    return category


def inside_tag(category: str) -> str:
    return "_" + category


def tag_inventory(categories: Iterable[str]) -> list[str]:
    """``blank`` first, then ``cat`` / ``_cat`` for each category in sorted order."""
    tags = [BLANK]
    for c in sorted(categories):
        tags += [begin_tag(c), inside_tag(c)]
    return tags


@dataclass
class TaggedSentence:
    tokens: list[str]
    tags: list[str]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags differ in length")

    def spans(self) -> list[tuple[str, int, int]]:
        return tag_spans(self.tags)


def tag_spans(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """(category, start, end) for every begin tag and its continuation run.

    A continuation tag without a matching open span is ignored.
    """
    spans, cur = [], None
    for i, t in enumerate(tags):
        if cur is not None and t == inside_tag(cur[0]):
            cur[2] = i + 1
            continue
        if cur is not None:
            spans.append(tuple(cur))
            cur = None
        if t != BLANK and not t.startswith("_"):
            cur = [t, i, i + 1]
    if cur is not None:
        spans.append(tuple(cur))
    return spans


def to_training_pairs(xml: str) -> TaggedSentence:
    """``<money> twenty five dollars </money> please`` -> tokens and tags."""
    tokens, tags = [], []
    open_cat, open_at, n_inside = None, 0, 0
    for pos, tok in enumerate(xml.split()):
        m = _TAG_RE.match(tok)
        if not m:
            if open_cat is None:
                tags.append(BLANK)
            else:
                tags.append(inside_tag(open_cat) if n_inside else begin_tag(open_cat))
                n_inside += 1
            tokens.append(tok)
            continue
        closing, cat = m.group(1) == "/", m.group(2)
        if not closing:
            if open_cat is not None:
                raise FormatError(f"span <{cat}> at token {pos} opens inside unclosed <{open_cat}> "
                                  f"from token {open_at}")
            open_cat, open_at, n_inside = cat, pos, 0
        else:
            if open_cat != cat:
                where = f"<{open_cat}> from token {open_at}" if open_cat else "no open span"
                raise FormatError(f"closing </{cat}> at token {pos} does not match {where}")
            if n_inside == 0:
                raise FormatError(f"empty span <{cat}> at token {open_at}")
            open_cat = None
    if open_cat is not None:
        raise FormatError(f"span <{open_cat}> from token {open_at} is never closed")
    return TaggedSentence(tokens, tags)


def to_xml(sent: TaggedSentence) -> str:
    out, spans = [], {s: (c, e) for c, s, e in sent.spans()}
    i = 0
    while i < len(sent.tokens):
        if i in spans:
            cat, end = spans[i]
            out += [f"<{cat}>", *sent.tokens[i:end], f"</{cat}>"]
            i = end
        else:
            out.append(sent.tokens[i])
            i += 1
    return " ".join(out)


# ---------------------------------------------------------------------------
# span matching


class _Recognizer:
    """Lazy subset construction over the input side of one TN machine."""

    def __init__(self, f: F.Fst):
        self.f = f
        self.trans: dict[tuple[frozenset, int], frozenset] = {}
        self.start = self._closure({f.start})

    def _closure(self, states) -> frozenset:
        stack, seen = list(states), set(states)
        while stack:
            s = stack.pop()
            for a in self.f.arcs(s):
                if a.ilabel == 0 and a.nextstate not in seen:
                    seen.add(a.nextstate)
                    stack.append(a.nextstate)
        return frozenset(seen)

    def step(self, states: frozenset, label: int) -> frozenset:
        key = (states, label)
        nxt = self.trans.get(key)
        if nxt is None:
            moved = {a.nextstate for s in states for a in self.f.arcs(s) if a.ilabel == label}
            nxt = self._closure(moved) if moved else frozenset()
            self.trans[key] = nxt
        return nxt

    def accepting(self, states: frozenset) -> bool:
        return any(s in self.f.finals for s in states)


@dataclass(frozen=True)
class Verbalization:
    category: str
    symbols: tuple[str, ...]   # lexical words with alt markers, tags removed
    cost: float

    @property
    def words(self) -> list[str]:
        return [s for s in self.symbols if not is_marker(s)]

    def group_key(self) -> tuple:
        """Category plus output with interchangeable segments collapsed."""
        key, depth = [self.category], 0
        for s in self.symbols:
            if is_marker(s):
                opening = not s.startswith("<~/")
                if opening and depth == 0:
                    key.append(s)
                depth += 1 if opening else -1
            elif depth == 0:
                key.append(s)
        return tuple(key)


class Normalizer:
    """Written -> tagged lexical text. Caches per-span work across sentences."""

    def __init__(self, pack: GrammarPack, lm: ngram.NGramModel | None = None, lam: float = 1.0,
                 nbest: int = NBEST, max_written: int = MAX_WRITTEN_TOKENS,
                 max_lexical: int = MAX_LEXICAL_TOKENS):
        self.pack = pack
        self.lm = lm
        self.lam = lam
        self.nbest = nbest
        self.max_written = max_written
        self.max_lexical = max_lexical
        self.recognizers = {c: _Recognizer(pack.tn[c]) for c in pack.categories}
        self._space = pack.syms.find(" ")
        self._cands: dict[tuple[str, str], list[Verbalization]] = {}

    # which categories accept tokens[i:j], for every j
    def _matches(self, tokens: Sequence[str], i: int) -> dict[int, list[str]]:
        syms = self.pack.syms
        limit = min(len(tokens), i + self.max_written)
        found: dict[int, list[str]] = {}
        for cat, rec in self.recognizers.items():
            states = rec.start
            for j in range(i, limit):
                if j > i:
                    if self._space is None:
                        break
                    states = rec.step(states, self._space)
                    if not states:
                        break
                for ch in tokens[j]:
                    label = syms.find(ch)
                    states = rec.step(states, label) if label else frozenset()
                    if not states:
                        break
                if not states:
                    break
                if rec.accepting(states):
                    found.setdefault(j + 1, []).append(cat)
        return found

    def candidates(self, category: str, written: str) -> list[Verbalization]:
        """Verbalizations of ``written`` that ITN maps straight back to it."""
        key = (category, written)
        got = self._cands.get(key)
        if got is not None:
            return got
        syms = self.pack.syms
        lattice = F.compose(F.compile_linear(list(written), syms), self.pack.tn[category])
        out = []
        target = written.split(" ")
        for p in F.shortest_paths(lattice, self.nbest):
            symbols = tuple(syms.symbol(l) for l in p.olabels[1:-1])
            v = Verbalization(category, symbols, p.weight)
            words = v.words
            if not words or len(words) > self.max_lexical:
                continue
            span = [self.pack.open_tag(category), *words, self.pack.close_tag(category)]
            if F.transduce_span(span, self.pack.itn[category]) != target:
                continue
            out.append(v)
        self._cands[key] = out
        return out

    def _tagged(self, v: Verbalization) -> list[str]:
        return [self.pack.open_tag(v.category), *v.words, self.pack.close_tag(v.category)]

    def _choose(self, cands: list[Verbalization], history: list[str], right: list[str],
                rng: random.Random) -> Verbalization:
        groups: dict[tuple, list[Verbalization]] = {}
        for v in cands:
            groups.setdefault(v.group_key(), []).append(v)
        ordered = list(groups.values())
        if len(ordered) > 1:
            scored = []
            for g in ordered:
                cost = min(v.cost for v in g)
                scored.append(([*history, *self._tagged(g[0]), *right], cost))
            if self.lm is not None:
                best = ngram.rerank(self.lm, scored, self.lam)
            else:
                best = min(range(len(scored)), key=lambda k: scored[k][1])
            group = ordered[best]
        else:
            group = ordered[0]
        return group[rng.randrange(len(group))] if len(group) > 1 else group[0]

    def normalize(self, written: Sequence[str] | str, seed: int = 0) -> str:
        tokens = written.split() if isinstance(written, str) else list(written)
        rng = random.Random(seed)
        out: list[str] = []
        history: list[str] = []
        i = 0
        while i < len(tokens):
            chosen = None
            matches = self._matches(tokens, i)
            for j in sorted(matches, reverse=True):
                span = " ".join(tokens[i:j])
                cands = [v for cat in matches[j] for v in self.candidates(cat, span)]
                if cands:
                    chosen = self._choose(cands, history, tokens[j:j + 2], rng), j
                    break
            if chosen is None:
                out.append(tokens[i])
                history.append(tokens[i])
                i += 1
                continue
            v, j = chosen
            tagged = self._tagged(v)
            out += tagged
            history += tagged
            i = j
        return " ".join(out)


def normalize(written: Sequence[str] | str, pack: GrammarPack, lm: ngram.NGramModel | None,
              seed: int = 0) -> str:
    return Normalizer(pack, lm).normalize(written, seed)


# ---------------------------------------------------------------------------
# corpus files


def line_seed(seed: int, index: int) -> int:
    return seed ^ index


def generate_corpus(written_corpus: str | Path, pack: GrammarPack, lm: ngram.NGramModel | None,
                    seed: int, out: str | Path, test_out: str | Path | None = None,
                    stats_out: str | Path | None = None, normalizer: Normalizer | None = None) -> dict:
    """Write ``token<TAB>tag`` rows (blank line between sentences) and return counts.

    ``test_out`` additionally gets ``lexical<TAB>display<TAB>tags`` rows, the
    evaluation format with oracle tags in the third column.
    """
    path = Path(written_corpus)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read written corpus {path}: {exc}") from exc
    norm = normalizer or Normalizer(pack, lm)
    counts: Counter = Counter()
    n_sent = 0
    rows, test_rows = [], []
    for idx, line in enumerate(lines):
        tokens = line.split()
        if not tokens:
            continue
        xml = norm.normalize(tokens, line_seed(seed, idx))
        sent = to_training_pairs(xml)
        n_sent += 1
        for cat, _, _ in sent.spans():
            counts[cat] += 1
        rows.extend(f"{t}\t{g}" for t, g in zip(sent.tokens, sent.tags))
        rows.append("")
        test_rows.append(f"{' '.join(sent.tokens)}\t{' '.join(tokens)}\t{' '.join(sent.tags)}")
    Path(out).write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
    if test_out is not None:
        Path(test_out).write_text("".join(r + "\n" for r in test_rows), encoding="utf-8")
    stats = {
        "sentences": n_sent,
        "categories": {c: counts.get(c, 0) for c in pack.categories},
        "spans": sum(counts.values()),
    }
    if stats_out is not None:
        Path(stats_out).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return stats


def read_tagged_tsv(path: str | Path) -> list[TaggedSentence]:
    """Parse ``token<TAB>tag`` rows with blank-line sentence breaks."""
    sents, toks, tags = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if toks:
                    sents.append(TaggedSentence(toks, tags))
                    toks, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected token<TAB>tag")
            toks.append(parts[0])
            tags.append(parts[1])
    if toks:
        sents.append(TaggedSentence(toks, tags))
    return sents


def check_well_formed(sent: TaggedSentence, inventory: Sequence[str] | None = None) -> None:
    """Continuation tags may only follow their own category's begin or continuation tag."""
    prev = BLANK
    for i, t in enumerate(sent.tags):
        if inventory is not None and t not in inventory:
            raise FormatError(f"unknown tag {t!r} at token {i}")
        if t.startswith("_"):
            cat = t[1:]
            if prev not in (cat, t):
                raise FormatError(f"tag {t!r} at token {i} does not continue a {cat} span")
        prev = t


def train_lexical_lm(written: Iterable[str], pack: GrammarPack, order: int = 4,
                     extra: Iterable[Sequence[str]] = ()) -> ngram.NGramModel:
    """Bootstrap the lexical LM used for choosing verbalizations.

    A first pass verbalizes ``written`` by FST cost alone; the LM is trained
    on that tagged lexical text (category tags are ordinary tokens, so the
    model sees which category a context favours) plus any curated ``extra``
    sentences in the same form.
    """
    norm = Normalizer(pack, None)
    corpus = [norm.normalize(line, line_seed(0, i)).split() for i, line in enumerate(written) if line.strip()]
    corpus += [list(s) for s in extra]
    return ngram.train(corpus, order=order)
