"""Count-based n-gram model with stupid backoff.

Used to rescore written-form candidates in the WFST baseline and to pick
between competing verbalizations during training-data generation. Scores
are natural-log values; stupid backoff does not normalize, so they are
relative scores rather than true log-probabilities.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, FormatError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_MAGIC = "#streamitn-ngram"


class NGramModel:
    """Immutable once trained; every method is a pure read."""

    def __init__(self, order: int = 4, alpha: float = 0.4):
        if order < 1:
            raise ConfigurationError(f"n-gram order must be >= 1, got {order}")
        if not 0.0 < alpha < 1.0:
            raise ConfigurationError(f"backoff factor must be in (0, 1), got {alpha}")
        self.order = order
        self.alpha = alpha
        # counts[k][context][token]: context is a tuple of length k
        self.counts: list[dict[tuple, Counter]] = [defaultdict(Counter) for _ in range(order)]
        self._totals: list[dict[tuple, int]] = [{} for _ in range(order)]
        self.vocab: set[str] = set()
        self._n_tokens = 0

    # -- construction -----------------------------------------------------

    def _add(self, tokens: Sequence[str]) -> None:
        seq = [BOS, *tokens, EOS]
        for i in range(1, len(seq)):
            w = seq[i]
            self.vocab.add(w)
            for k in range(min(self.order, i + 1)):
                ctx = tuple(seq[i - k:i])
                self.counts[k][ctx][w] += 1

    def _finish(self) -> None:
        self.counts = [dict(level) for level in self.counts]
        self._totals = [{ctx: sum(c.values()) for ctx, c in level.items()} for level in self.counts]
        self._n_tokens = self._totals[0].get((), 0)

    @property
    def vocab_size(self) -> int:
        # seen types plus one slot for anything unseen
        return len(self.vocab) + 1

    def count(self, token: str, context: Sequence[str] = ()) -> int:
        ctx = tuple(context)
        if len(ctx) >= self.order:
            return 0
        return self.counts[len(ctx)].get(ctx, {}).get(token, 0)

    # -- scoring ----------------------------------------------------------

    def cond_score(self, token: str, history: Sequence[str]) -> float:
        """Backed-off score of ``token`` after ``history`` (natural log)."""
        hist = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        penalty = 0.0
        log_alpha = math.log(self.alpha)
        for k in range(len(hist), 0, -1):
            ctx = hist[len(hist) - k:]
            c = self.counts[k].get(ctx)
            if c is not None and token in c:
                return penalty + math.log(c[token] / self._totals[k][ctx])
            penalty += log_alpha
        c = self.counts[0].get((), {}).get(token, 0)
        if c:
            return penalty + math.log(c / self._n_tokens)
        return penalty - math.log(self.vocab_size)

    def score(self, tokens: Sequence[str], bos: bool = True, eos: bool = True) -> float:
        """Sum of backed-off conditional scores over ``tokens`` (and ``</s>`` when ``eos``)."""
        hist: list[str] = [BOS] if bos else []
        total = 0.0
        for w in tokens:
            total += self.cond_score(w, hist)
            hist.append(w)
        if eos:
            total += self.cond_score(EOS, hist)
        return total

    def perplexity(self, corpus: Iterable[Sequence[str]]) -> float:
        total, n = 0.0, 0
        for sent in corpus:
            total += self.score(sent)
            n += len(sent) + 1
        return math.exp(-total / max(n, 1))

    def most_frequent(self) -> str:
        unigrams = self.counts[0].get((), {})
        return min(unigrams, key=lambda w: (-unigrams[w], w))

    # -- persistence ------------------------------------------------------

    def to_text(self) -> str:
        lines = [_MAGIC, f"order\t{self.order}", f"alpha\t{self.alpha!r}"]
        for k, level in enumerate(self.counts):
            lines.append(f"\\{k + 1}-grams:")
            rows = sorted((" ".join(ctx), w, n) for ctx, c in level.items() for w, n in c.items())
            lines.extend(f"{n}\t{ctx}\t{w}" for ctx, w, n in rows)
        lines.append("\\end\\")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NGramModel":
        lines = text.splitlines()
        try:
            if lines[0] != _MAGIC:
                raise FormatError("not an n-gram model file")
            order = int(lines[1].split("\t")[1])
            alpha = float(lines[2].split("\t")[1])
            m = cls(order, alpha)
            k = -1
            for line in lines[3:]:
                if line == "\\end\\":
                    break
                if line.startswith("\\") and line.endswith("-grams:"):
                    k = int(line[1:-7]) - 1
                    continue
                n, ctx, w = line.split("\t")
                context = tuple(ctx.split(" ")) if ctx else ()
                if len(context) != k:
                    raise FormatError(f"context {ctx!r} does not belong in the {k + 1}-gram block")
                m.counts[k][context][w] = int(n)
                m.vocab.add(w)
            else:
                raise FormatError("missing end marker")
        except (IndexError, ValueError) as exc:
            raise FormatError(f"malformed n-gram model: {exc}") from exc
        m._finish()
        return m

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NGramModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def train(corpus: Iterable[Sequence[str]], order: int = 4, alpha: float = 0.4) -> NGramModel:
    m = NGramModel(order, alpha)
    n = 0
    for sent in corpus:
        m._add(list(sent))
        n += 1
    if n == 0:
        raise ConfigurationError("cannot train an n-gram model on an empty corpus")
    m._finish()
    return m


def rerank(m: NGramModel, candidates: Sequence[tuple[Sequence[str], float]], lam: float = 1.0) -> int:
    """Index minimising ``fst_cost - lam * score``; the earliest index wins ties."""
    if not candidates:
        raise ValueError("rerank needs at least one candidate")
    best, best_cost = 0, math.inf
    for i, (tokens, fst_cost) in enumerate(candidates):
        cost = fst_cost - lam * m.score(tokens) if lam else fst_cost
        if cost < best_cost:
            best, best_cost = i, cost
    return best
