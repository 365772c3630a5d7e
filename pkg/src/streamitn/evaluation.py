"""Metrics, the full-utterance WFST + n-gram baseline, and the runtime benchmark."""
from __future__ import annotations

import json
import random
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import fst as F
from . import ngram
from .errors import FormatError
from .rules import GrammarPack, is_marker


@dataclass(frozen=True)
class ItnInstance:
    start: int
    end: int
    display: str


def _align(a: Sequence[str], b: Sequence[str]) -> list[tuple[str, int, int]]:
    """Unit-cost alignment ops ('eq'|'sub'|'del'|'ins', i, j) in order.

    Backtrace prefers substitution, then deletion, then insertion.
    """
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j - 1] + (a[i - 1] != b[j - 1]), d[i - 1][j] + 1, d[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (a[i - 1] != b[j - 1]):
            ops.append(("eq" if a[i - 1] == b[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            ops.append(("del", i - 1, j))
            i -= 1
        else:
            ops.append(("ins", i, j - 1))
            j -= 1
    ops.reverse()
    return ops


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def extract_instances(lexical: Sequence[str], display: Sequence[str]) -> list[ItnInstance]:
    """Maximal runs of non-equal alignment ops, as lexical spans with their display text.

    A run that touches no lexical token (pure insertion) is attached to the
    preceding lexical token, or the following one at sentence start.
    """
    if isinstance(lexical, str):
        lexical = lexical.split()
    if isinstance(display, str):
        display = display.split()
    ops = _align(lexical, display)
    eq_at = {i: j for kind, i, j in ops if kind == "eq"}
    regions, cur = [], []
    for op in ops:
        if op[0] == "eq":
            if cur:
                regions.append(cur)
                cur = []
        else:
            cur.append(op)
    if cur:
        regions.append(cur)
    spans = []      # [lex_start, lex_end, disp_start, disp_end]
    for reg in regions:
        lex_idx = [i for kind, i, _ in reg if kind in ("sub", "del")]
        disp_idx = [j for kind, _, j in reg if kind in ("sub", "ins")]
        if lex_idx:
            span = [min(lex_idx), max(lex_idx) + 1]
        else:
            at = reg[0][1]
            anchor = at - 1 if at > 0 else at
            if anchor >= len(lexical):
                continue        # empty lexical side: nothing to anchor to
            span = [anchor, anchor + 1]
            disp_idx.append(eq_at[anchor])
        if disp_idx:
            span += [min(disp_idx), max(disp_idx) + 1]
        else:
            span += [None, None]
        if spans and spans[-1][1] > span[0]:
            prev = spans[-1]
            prev[1] = max(prev[1], span[1])
            if span[2] is not None:
                prev[2] = span[2] if prev[2] is None else min(prev[2], span[2])
                prev[3] = span[3] if prev[3] is None else max(prev[3], span[3])
        else:
            spans.append(span)
    return [ItnInstance(a, b, "" if c is None else " ".join(display[c:d])) for a, b, c, d in spans]


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def rates(self) -> tuple[float, float, float]:
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f


def match_instances(ref: Sequence[ItnInstance], hyp: Sequence[ItnInstance]) -> Counts:
    """Greedy by position: a hypothesis hits the first free reference with the
    same display text and an overlapping span."""
    used = [False] * len(ref)
    tp = 0
    for h in sorted(hyp, key=lambda x: (x.start, x.end)):
        for k, r in enumerate(ref):
            if not used[k] and r.display == h.display and r.start < h.end and h.start < r.end:
                used[k] = True
                tp += 1
                break
    return Counts(tp, len(hyp) - tp, len(ref) - tp)


def prf1(ref: Sequence[Sequence[ItnInstance]], hyp: Sequence[Sequence[ItnInstance]]) -> tuple[float, float, float]:
    """Per-sentence instance lists in, corpus precision/recall/F1 out."""
    return count_matches(ref, hyp).rates()


def count_matches(ref, hyp) -> Counts:
    if len(ref) != len(hyp):
        raise ValueError("reference and hypothesis sentence counts differ")
    total = Counts()
    for r, h in zip(ref, hyp):
        c = match_instances(r, h)
        total.tp += c.tp
        total.fp += c.fp
        total.fn += c.fn
    return total


def ter(hyp: str, ref: str) -> float:
    """Token error rate in percent, normalized by reference length."""
    h, r = hyp.split(), ref.split()
    return 100.0 * levenshtein(h, r) / max(1, len(r))


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ter: float
    tp: int
    fp: int
    fn: int
    sentences: int
    system: str = ""
    runtime: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("system", self.system or "-"), ("sentences", str(self.sentences)),
                ("precision", f"{self.precision:.4f}"), ("recall", f"{self.recall:.4f}"),
                ("f1", f"{self.f1:.4f}"), ("ter", f"{self.ter:.2f}"),
                ("tp/fp/fn", f"{self.tp}/{self.fp}/{self.fn}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def score(lexical: Sequence[str], refs: Sequence[str], hyps: Sequence[str], system: str = "") -> EvalReport:
    """Corpus report; TER pools edits over all sentences."""
    ref_inst, hyp_inst = [], []
    edits = ref_tokens = 0
    for lex, r, h in zip(lexical, refs, hyps):
        toks = lex.split() if isinstance(lex, str) else list(lex)
        ref_inst.append(extract_instances(toks, r.split()))
        hyp_inst.append(extract_instances(toks, h.split()))
        edits += levenshtein(h.split(), r.split())
        ref_tokens += len(r.split())
    c = count_matches(ref_inst, hyp_inst)
    p, rr, f = c.rates()
    return EvalReport(p, rr, f, 100.0 * edits / max(1, ref_tokens), c.tp, c.fp, c.fn, len(refs), system)


@dataclass
class TestItem:
    lexical: list[str]
    display: str
    tags: list[str] | None = None


def read_test_set(path: str | Path) -> list[TestItem]:
    """``lexical<TAB>display[<TAB>tags]`` per line."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise FormatError(f"{path}:{lineno}: expected lexical<TAB>display[<TAB>tags]")
            lex = parts[0].split()
            tags = parts[2].split() if len(parts) == 3 else None
            if tags is not None and len(tags) != len(lex):
                raise FormatError(f"{path}:{lineno}: {len(tags)} tags for {len(lex)} tokens")
            items.append(TestItem(lex, parts[1], tags))
    return items


# ---------------------------------------------------------------------------
# baseline


class WfstBaseline:
    """Whole-utterance decoding: every position may start any category span or
    copy its word; the n best candidates are reranked by a display-form LM."""

    def __init__(self, pack: GrammarPack, lm: ngram.NGramModel | None, lam: float = 1.0, nbest: int = 16,
                 span_cost: float = 1.0, copy_cost: float = 1.0):
        self.pack = pack
        self.lm = lm
        self.lam = lam
        self.nbest = nbest
        syms = pack.syms
        self.unk = syms.find(F.UNKNOWN)
        self.tag_labels = {}
        parts = []
        for cat in pack.categories:
            o, c = syms.find(pack.open_tag(cat)), syms.find(pack.close_tag(cat))
            self.tag_labels[o] = ("open", cat)
            self.tag_labels[c] = ("close", cat)
            span = F.concat(F.concat(F.string_pair([], [o], syms, weight=span_cost), pack.core[cat]),
                            F.string_pair([], [c], syms))
            parts.append(span)
        copy = F.Fst(syms)
        copy.add_states(2)
        copy.set_start(0)
        copy.set_final(1)
        for label, sym in enumerate(syms):
            if label == 0 or label in self.tag_labels or is_marker(sym):
                continue
            copy.add_arc(0, label, label, copy_cost, 1)
        parts.append(copy)
        self.machine = F.closure(F.union(parts))

    def candidates(self, lexical: Sequence[str]) -> list[tuple[list[str], float]]:
        syms = self.pack.syms
        lattice = F.compose(F.compile_linear(lexical, syms), self.machine)
        oov = [t for t in lexical if syms.find(t) is None]
        out = []
        for p in F.shortest_paths(lattice, self.nbest):
            tokens, chars, inside, k = [], [], False, 0
            for label in p.olabels:
                tag = self.tag_labels.get(label)
                if tag is not None:
                    if tag[0] == "close":
                        tokens += [t for t in "".join(chars).split(" ") if t]
                        chars = []
                    inside = tag[0] == "open"
                elif inside:
                    chars.append(syms.symbol(label))
                elif label == self.unk:
                    tokens.append(oov[k])
                    k += 1
                else:
                    tokens.append(syms.symbol(label))
            out.append((tokens, p.weight))
        return out

    def convert(self, lexical: Sequence[str] | str) -> str:
        toks = lexical.split() if isinstance(lexical, str) else list(lexical)
        if not toks:
            return ""
        cands = self.candidates(toks)
        if not cands:
            return " ".join(toks)
        if self.lm is None or self.lam == 0:
            best = 0
        else:
            best = ngram.rerank(self.lm, cands, self.lam)
        return " ".join(cands[best][0])


def wfst_baseline_convert(lexical: Sequence[str], pack: GrammarPack, lm: ngram.NGramModel | None,
                          lam: float = 1.0, n: int = 16) -> str:
    return WfstBaseline(pack, lm, lam, n).convert(lexical)


# ---------------------------------------------------------------------------
# runtime benchmark

FILLER = ["okay", "so", "then", "we", "can", "talk", "about", "it", "later", "today", "right", "now",
          "please", "thanks", "well", "maybe", "sure", "and"]


def bench_sentences(length: int, count: int, segments: Sequence[Sequence[str]], seed: int = 0,
                    span_every: int = 10) -> list[list[str]]:
    """Lexical sentences of exactly ``length`` tokens with about one span per ``span_every``.

    ``segments`` are short lexical clauses that each contain one span.
    """
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        toks: list[str] = []
        while len(toks) < length:
            seg = list(rng.choice(segments))
            pad = max(0, span_every - len(seg))
            toks += seg + [rng.choice(FILLER) for _ in range(pad)]
        out.append(toks[:length])
    return out


def _median_time(fn: Callable[[list[str]], object], sentences: list[list[str]], trials: int, warmup: int) -> float:
    for k in range(warmup):
        fn(sentences[k % len(sentences)])
    times = []
    for k in range(trials):
        s = sentences[k % len(sentences)]
        t0 = time.perf_counter()
        fn(s)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def growth_exponent(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(seconds, float)), 1)
    return float(slope)


def bench_runtime(lengths: Sequence[int], trials: int, systems: dict[str, Callable[[list[str]], object]],
                  segments: Sequence[Sequence[str]], warmup: int = 5, seed: int = 0) -> dict:
    """Median seconds per sentence for every system and length, plus log-log slopes."""
    try:
        import torch
        torch.set_num_threads(1)
    except ImportError:     # pragma: no cover - torch is a hard dependency
        pass
    table: dict[str, dict[int, float]] = {name: {} for name in systems}
    for L in lengths:
        sents = bench_sentences(L, max(trials, warmup), segments, seed + L)
        for name, fn in systems.items():
            table[name][L] = _median_time(fn, sents, trials, warmup)
    exps = {name: growth_exponent(list(lengths), [table[name][L] for L in lengths]) for name in systems}
    return {"lengths": list(lengths), "trials": trials, "seconds": table, "exponents": exps}


# ---------------------------------------------------------------------------
# engine evaluation and chunk sweep


def evaluate_engine(engine, items: Sequence[TestItem], oracle: bool = False, system: str = "") -> EvalReport:
    """Run the streaming engine (or its converter on reference tags) over a test set."""
    hyps = []
    for it in items:
        if oracle:
            if it.tags is None:
                raise FormatError("oracle-tag evaluation needs a tags column in the test set")
            hyps.append(engine.convert_tagged(it.lexical, it.tags))
        else:
            hyps.append(engine.convert(it.lexical))
    return score([it.lexical for it in items], [it.display for it in items], hyps,
                 system or ("oracle-tags" if oracle else "streaming"))


def evaluate_baseline(baseline: WfstBaseline, items: Sequence[TestItem]) -> EvalReport:
    hyps = [baseline.convert(it.lexical) for it in items]
    return score([it.lexical for it in items], [it.display for it in items], hyps, "wfst-ngram")


def chunk_latency(chunk: int) -> float:
    """Mean number of future tokens a token waits for inside a full chunk."""
    return sum(chunk - 1 - k for k in range(chunk)) / chunk


def streamed_latency(tagger, items: Sequence[TestItem]) -> float:
    """Mean emit latency observed when streaming the test set, flushes included."""
    total = n = 0
    for it in items:
        s = tagger.open_stream()
        for tok in it.lexical:
            for _tok, _tag, lat in s.push(tok):
                total += lat
                n += 1
        for _tok, _tag, lat in s.flush():
            total += lat
            n += 1
    return total / max(n, 1)


def sweep_row(chunk: int, tagger, pack, items: Sequence[TestItem]) -> dict:
    from .pipeline import ItnEngine

    rep = evaluate_engine(ItnEngine(tagger, pack), items)
    return {"chunk": chunk, "latency": chunk_latency(chunk), "streamed_latency": streamed_latency(tagger, items),
            "precision": rep.precision, "recall": rep.recall, "f1": rep.f1, "ter": rep.ter}
