"""Streaming ITN: tag tokens as chunks complete, convert closed spans with the
category's ITN machine, release display tokens in input order."""
from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Hashable, Iterable, Protocol, Sequence

from . import fst as F
from .datagen import BLANK, begin_tag, inside_tag, tag_inventory
from .errors import ConfigurationError
from .rules import GrammarPack

log = logging.getLogger(__name__)

DEFAULT_MAX_SPAN = 10
DEFAULT_CACHE = 1024

_MISSING = object()


class TagStreamLike(Protocol):
    def push(self, token: str) -> list[tuple[str, str, int]]: ...
    def flush(self) -> list[tuple[str, str, int]]: ...


class TaggerLike(Protocol):
    inventory: list[str]
    chunk_size: int

    def open_stream(self) -> TagStreamLike: ...


class SpanCache:
    """Bounded LRU map shared between sessions; a lock guards every access."""

    def __init__(self, capacity: int = DEFAULT_CACHE):
        if capacity < 0:
            raise ConfigurationError("cache capacity must be >= 0")
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable, default=None):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return default

    def put(self, key: Hashable, value) -> None:
        if self.capacity == 0:
            return
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self):
        return len(self._data)

    def __contains__(self, key):
        return key in self._data

    def clear(self):
        with self._lock:
            self._data.clear()


class ScriptedTagger:
    """Replays given tags with real chunk timing; used for oracle-tag runs and tests."""

    def __init__(self, inventory: Sequence[str], chunk_size: int = 1):
        self.inventory = list(inventory)
        self.chunk_size = chunk_size
        self.script: list[str] = []

    def open_stream(self) -> "_ScriptedStream":
        return _ScriptedStream(self)


class _ScriptedStream:
    def __init__(self, owner: ScriptedTagger):
        self.owner = owner
        self.pending: list[str] = []
        self.offset = 0

    def _tag(self, i: int) -> str:
        script = self.owner.script
        return script[i] if i < len(script) else BLANK

    def _emit(self):
        n = len(self.pending)
        out = [(t, self._tag(self.offset + i), n - 1 - i) for i, t in enumerate(self.pending)]
        self.offset += n
        self.pending = []
        return out

    def push(self, token):
        self.pending.append(token)
        return self._emit() if len(self.pending) == self.owner.chunk_size else []

    def flush(self):
        out = self._emit() if self.pending else []
        self.offset = 0
        return out


@dataclass(frozen=True)
class Provenance:
    """Where an output token came from: a copied input index or a converted span."""
    kind: str            # "copy" or "span"
    start: int
    end: int
    category: str | None = None


class ItnEngine:
    def __init__(self, tagger: TaggerLike, pack: GrammarPack, cache_capacity: int = DEFAULT_CACHE,
                 max_span: int = DEFAULT_MAX_SPAN, use_cache: bool = True):
        self._check_inventory(tagger, pack)
        self.tagger = tagger
        self.pack = pack
        self.max_span = max_span
        self.use_cache = use_cache
        self.cache = SpanCache(cache_capacity)

    @staticmethod
    def _check_inventory(tagger: TaggerLike, pack: GrammarPack) -> None:
        expected = tag_inventory(pack.categories)
        if list(tagger.inventory) != expected:
            missing = sorted(set(expected) - set(tagger.inventory))
            extra = sorted(set(tagger.inventory) - set(expected))
            raise ConfigurationError(
                f"tagger tag inventory does not match grammar pack (missing {missing}, unexpected {extra})")

    def swap_pack(self, pack: GrammarPack) -> None:
        """Replace the grammars; the cache is dropped since its entries belong to the old pack."""
        self._check_inventory(self.tagger, pack)
        self.pack = pack
        self.cache = SpanCache(self.cache.capacity)

    def transduce(self, category: str, tokens: Sequence[str]) -> list[str] | None:
        key = (category, tuple(tokens))
        if self.use_cache:
            hit = self.cache.get(key, _MISSING)
            if hit is not _MISSING:
                return None if hit is None else list(hit)
        span = [self.pack.open_tag(category), *tokens, self.pack.close_tag(category)]
        out = F.transduce_span(span, self.pack.itn[category])
        if self.use_cache:
            self.cache.put(key, None if out is None else tuple(out))
        return out

    def open_session(self) -> "Session":
        return Session(self)

    def convert(self, sentence: str | Sequence[str]) -> str:
        tokens = sentence.split() if isinstance(sentence, str) else list(sentence)
        s = self.open_session()
        out = []
        for t in tokens:
            out += s.push(t)
        out += s.flush()
        return " ".join(out)

    def convert_tagged(self, tokens: Sequence[str], tags: Sequence[str]) -> str:
        """Convert with given tags instead of the tagger's (oracle mode)."""
        if len(tokens) != len(tags):
            raise ValueError("tokens and tags differ in length")
        s = Session(self, stream=None)
        out = []
        for t, g in zip(tokens, tags):
            out += s.accept(t, g)
        out += s.close()
        return " ".join(out)


class Session:
    """One utterance stream. Not thread-safe; run one session per thread."""

    def __init__(self, engine: ItnEngine, stream: TagStreamLike | None | bool = True):
        self.engine = engine
        self.stream = engine.tagger.open_stream() if stream is True else stream
        self.open_cat: str | None = None
        self.span: list[str] = []
        self.span_start = 0
        self.position = 0           # index of the next tagged token
        self.provenance: list[Provenance] = []
        self.orphans = 0

    # tagger-facing side
    def push(self, token: str) -> list[str]:
        out = []
        for tok, tag, _lat in self.stream.push(token):
            out += self.accept(tok, tag)
        return out

    def flush(self) -> list[str]:
        out = []
        for tok, tag, _lat in self.stream.flush():
            out += self.accept(tok, tag)
        out += self.close()
        self.position = 0
        return out

    # span bookkeeping on tagged tokens
    def accept(self, token: str, tag: str) -> list[str]:
        out: list[str] = []
        idx = self.position
        self.position += 1
        if self.open_cat is not None and tag == inside_tag(self.open_cat):
            self.span.append(token)
            if len(self.span) >= self.engine.max_span:
                out += self.close()
            return out
        out += self.close()
        if tag.startswith("_") or tag == BLANK or tag not in self.engine.pack.itn:
            if tag != BLANK:
                self.orphans += 1
                log.debug("tag %r at token %d has no open span; treated as blank", tag, idx)
            self.provenance.append(Provenance("copy", idx, idx + 1))
            out.append(token)
            return out
        self.open_cat = tag
        self.span = [token]
        self.span_start = idx
        if self.engine.max_span <= 1:
            out += self.close()
        return out

    def close(self) -> list[str]:
        if self.open_cat is None:
            return []
        cat, toks, start = self.open_cat, self.span, self.span_start
        self.open_cat, self.span = None, []
        converted = self.engine.transduce(cat, toks)
        if converted is None:
            # grammar rejected the span: emit the lexical tokens untouched
            for k in range(len(toks)):
                self.provenance.append(Provenance("copy", start + k, start + k + 1))
            return list(toks)
        self.provenance += [Provenance("span", start, start + len(toks), cat)] * len(converted)
        return converted


def convert_all(engine: ItnEngine, sentences: Iterable[str | Sequence[str]]) -> list[str]:
    return [engine.convert(s) for s in sentences]
