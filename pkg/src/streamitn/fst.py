"""Weighted finite-state transducers over the tropical semiring.

Weights are non-negative costs combined with ``+`` along a path and ``min``
across paths. Label 0 is epsilon in every symbol table.
"""
from __future__ import annotations

import heapq
import io
import math
import struct
import threading
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Iterable, NamedTuple, Sequence

from .errors import ConfigurationError, FormatError

EPSILON = "<eps>"
UNKNOWN = "<unk>"
ZERO = math.inf  # semiring zero

MAGIC = b"ITNF"
VERSION = 1


class SymbolTable:
    """Bidirectional symbol <-> label mapping; 0 is epsilon, 1 is ``<unk>``.

    Tables are append-only, so registering a new symbol never invalidates an
    existing machine that uses the table.
    """

    def __init__(self, symbols: Iterable[str] = ()):
        self._symbols: list[str] = [EPSILON, UNKNOWN]
        self._ids: dict[str, int] = {EPSILON: 0, UNKNOWN: 1}
        self._lock = threading.Lock()
        for sym in symbols:
            self.add(sym)

    def add(self, symbol: str) -> int:
        label = self._ids.get(symbol)
        if label is not None:
            return label
        with self._lock:
            label = self._ids.get(symbol)
            if label is None:
                label = len(self._symbols)
                self._symbols.append(symbol)
                self._ids[symbol] = label
            return label

    def find(self, symbol: str) -> int | None:
        return self._ids.get(symbol)

    def label(self, symbol: str) -> int:
        """Label for ``symbol``, or the ``<unk>`` label if unregistered."""
        return self._ids.get(symbol, 1)

    def symbol(self, label: int) -> str:
        return self._symbols[label]

    def __contains__(self, symbol):
        return symbol in self._ids

    def __len__(self):
        return len(self._symbols)

    def __iter__(self):
        return iter(self._symbols)

    def __eq__(self, other):
        if not isinstance(other, SymbolTable):
            return NotImplemented
        return self is other or self._symbols == other._symbols

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"SymbolTable({len(self)} symbols)"

    def copy(self) -> "SymbolTable":
        table = SymbolTable()
        for sym in self._symbols[2:]:
            table.add(sym)
        return table


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


@dataclass(frozen=True)
class Path:
    olabels: tuple[int, ...]
    weight: float


class Fst:
    """A weighted transducer. Built by the ``add_*`` methods, then treated as immutable.

    Every operation in this module returns a fresh machine and leaves its
    inputs untouched.
    """

    def __init__(self, isyms: SymbolTable, osyms: SymbolTable | None = None):
        self.isyms = isyms
        self.osyms = isyms if osyms is None else osyms
        self._arcs: list[list[Arc]] = []
        self.finals: dict[int, float] = {}
        self.start = -1

    # construction ------------------------------------------------------

    def add_state(self) -> int:
        self._arcs.append([])
        self._invalidate()
        return len(self._arcs) - 1

    def add_states(self, n: int) -> int:
        first = len(self._arcs)
        self._arcs.extend([] for _ in range(n))
        self._invalidate()
        return first

    def add_arc(self, state: int, ilabel: int, olabel: int, weight: float, nextstate: int):
        self._arcs[state].append(Arc(ilabel, olabel, float(weight), nextstate))
        self._invalidate()

    def set_start(self, state: int):
        self.start = state

    def set_final(self, state: int, weight: float = 0.0):
        if weight == ZERO:
            self.finals.pop(state, None)
        else:
            self.finals[state] = float(weight)

    def _invalidate(self):
        self.__dict__.pop("_index", None)

    # inspection --------------------------------------------------------

    @property
    def num_states(self) -> int:
        return len(self._arcs)

    @property
    def num_arcs(self) -> int:
        return sum(len(a) for a in self._arcs)

    def states(self) -> range:
        return range(len(self._arcs))

    def arcs(self, state: int) -> list[Arc]:
        return self._arcs[state]

    def final(self, state: int) -> float:
        return self.finals.get(state, ZERO)

    def is_final(self, state: int) -> bool:
        return state in self.finals

    @cached_property
    def _index(self):
        """Per state: (non-epsilon arcs keyed by ilabel, input-epsilon arcs)."""
        index = []
        for arcs in self._arcs:
            by_label: dict[int, list[Arc]] = {}
            eps = []
            for arc in arcs:
                if arc.ilabel == 0:
                    eps.append(arc)
                else:
                    by_label.setdefault(arc.ilabel, []).append(arc)
            index.append((by_label, eps))
        return index

    def copy(self) -> "Fst":
        out = Fst(self.isyms, self.osyms)
        out._arcs = [list(a) for a in self._arcs]
        out.finals = dict(self.finals)
        out.start = self.start
        return out

    def __repr__(self):
        return f"<Fst states={self.num_states} arcs={self.num_arcs} start={self.start}>"

    def to_text(self) -> str:
        """AT&T-style listing, mostly for debugging."""
        lines = []
        for s in self.states():
            for arc in self._arcs[s]:
                lines.append(
                    f"{s}\t{arc.nextstate}\t{self.isyms.symbol(arc.ilabel)}"
                    f"\t{self.osyms.symbol(arc.olabel)}\t{arc.weight:g}"
                )
        for s, w in sorted(self.finals.items()):
            lines.append(f"{s}\t{w:g}")
        return "\n".join(lines)


def _check_tables(a: SymbolTable, b: SymbolTable, what: str):
    if a is not b and a != b:
        raise ConfigurationError(f"symbol table mismatch in {what}")


def _append(dst: Fst, src: Fst) -> int:
    """Copy the states of ``src`` into ``dst``; returns the state offset."""
    offset = dst.num_states
    for arcs in src._arcs:
        dst._arcs.append([Arc(a.ilabel, a.olabel, a.weight, a.nextstate + offset) for a in arcs])
    dst._invalidate()
    return offset


# ---------------------------------------------------------------------------
# construction


def compile_linear(tokens: Sequence[str], syms: SymbolTable, osyms: SymbolTable | None = None) -> Fst:
    """Linear-chain acceptor for ``tokens``; unregistered tokens become ``<unk>``."""
    fst = Fst(syms, osyms)
    fst.add_states(len(tokens) + 1)
    fst.set_start(0)
    out = fst.osyms
    for i, tok in enumerate(tokens):
        fst.add_arc(i, syms.label(tok), out.label(tok), 0.0, i + 1)
    fst.set_final(len(tokens), 0.0)
    return fst


def string_pair(inputs: Sequence[int], outputs: Sequence[int], isyms: SymbolTable,
                osyms: SymbolTable | None = None, weight: float = 0.0) -> Fst:
    """Chain transducer mapping one label string to another, aligned left and padded with epsilon."""
    fst = Fst(isyms, osyms)
    n = max(len(inputs), len(outputs))
    fst.add_states(n + 1)
    fst.set_start(0)
    for i in range(n):
        il = inputs[i] if i < len(inputs) else 0
        ol = outputs[i] if i < len(outputs) else 0
        fst.add_arc(i, il, ol, weight if i == 0 else 0.0, i + 1)
    fst.set_final(n, weight if n == 0 else 0.0)
    return fst


def epsilon_machine(isyms: SymbolTable, osyms: SymbolTable | None = None, weight: float = 0.0) -> Fst:
    fst = Fst(isyms, osyms)
    fst.set_start(fst.add_state())
    fst.set_final(0, weight)
    return fst


def empty_machine(isyms: SymbolTable, osyms: SymbolTable | None = None) -> Fst:
    """Machine with a start state and no accepting path."""
    fst = Fst(isyms, osyms)
    fst.set_start(fst.add_state())
    return fst


# ---------------------------------------------------------------------------
# rational operations


def union(fsts: Sequence[Fst]) -> Fst:
    if not fsts:
        raise ValueError("union of zero machines")
    first = fsts[0]
    for f in fsts[1:]:
        _check_tables(first.isyms, f.isyms, "union")
        _check_tables(first.osyms, f.osyms, "union")
    if len(fsts) == 1:
        return first.copy()
    out = Fst(first.isyms, first.osyms)
    out.set_start(out.add_state())
    for f in fsts:
        if f.start < 0:
            continue
        offset = _append(out, f)
        out.add_arc(0, 0, 0, 0.0, f.start + offset)
        for s, w in f.finals.items():
            out.set_final(s + offset, w)
    return out


def concat(a: Fst, b: Fst) -> Fst:
    _check_tables(a.osyms, b.osyms, "concat")
    _check_tables(a.isyms, b.isyms, "concat")
    out = a.copy()
    out.finals = {}
    if a.start < 0 or b.start < 0:
        return out
    offset = _append(out, b)
    for s, w in a.finals.items():
        out.add_arc(s, 0, 0, w, b.start + offset)
    for s, w in b.finals.items():
        out.set_final(s + offset, w)
    return out


def closure(f: Fst) -> Fst:
    """Kleene star: the empty string at weight 0, plus one or more repetitions."""
    out = Fst(f.isyms, f.osyms)
    out.set_start(out.add_state())
    out.set_final(0, 0.0)
    if f.start < 0:
        return out
    offset = _append(out, f)
    out.add_arc(0, 0, 0, 0.0, f.start + offset)
    for s, w in f.finals.items():
        out.add_arc(s + offset, 0, 0, w, f.start + offset)
        out.set_final(s + offset, w)
    return out


def invert(f: Fst) -> Fst:
    out = Fst(f.osyms, f.isyms)
    out._arcs = [[Arc(a.olabel, a.ilabel, a.weight, a.nextstate) for a in arcs] for arcs in f._arcs]
    out.finals = dict(f.finals)
    out.start = f.start
    return out


def relabel(f: Fst, imap: dict[int, int] | None = None, omap: dict[int, int] | None = None) -> Fst:
    """Rewrite labels through the given maps; unmapped labels are kept."""
    imap = imap or {}
    omap = omap or {}
    out = Fst(f.isyms, f.osyms)
    out._arcs = [
        [Arc(imap.get(a.ilabel, a.ilabel), omap.get(a.olabel, a.olabel), a.weight, a.nextstate) for a in arcs]
        for arcs in f._arcs
    ]
    out.finals = dict(f.finals)
    out.start = f.start
    return out


def connect(f: Fst) -> Fst:
    """Drop states that are not both reachable from start and able to reach a final state."""
    n = f.num_states
    if f.start < 0 or n == 0:
        return empty_machine(f.isyms, f.osyms)
    access = [False] * n
    access[f.start] = True
    stack = [f.start]
    reverse: list[list[int]] = [[] for _ in range(n)]
    while stack:
        s = stack.pop()
        for a in f._arcs[s]:
            reverse[a.nextstate].append(s)
            if not access[a.nextstate]:
                access[a.nextstate] = True
                stack.append(a.nextstate)
    coaccess = [False] * n
    stack = [s for s in f.finals if access[s]]
    for s in stack:
        coaccess[s] = True
    while stack:
        s = stack.pop()
        for p in reverse[s]:
            if not coaccess[p]:
                coaccess[p] = True
                stack.append(p)
    if not coaccess[f.start]:
        return empty_machine(f.isyms, f.osyms)
    keep = [s for s in range(n) if access[s] and coaccess[s]]
    # keep start at 0
    keep.remove(f.start)
    keep.insert(0, f.start)
    remap = {s: i for i, s in enumerate(keep)}
    out = Fst(f.isyms, f.osyms)
    out._arcs = [
        [Arc(a.ilabel, a.olabel, a.weight, remap[a.nextstate]) for a in f._arcs[s] if a.nextstate in remap]
        for s in keep
    ]
    out.start = 0
    out.finals = {remap[s]: w for s, w in f.finals.items() if s in remap}
    return out


def rm_epsilon(f: Fst) -> Fst:
    """Remove arcs labelled epsilon on both sides (tropical semiring)."""
    n = f.num_states
    if n == 0:
        return f.copy()
    has_eps = any(a.ilabel == 0 and a.olabel == 0 for arcs in f._arcs for a in arcs)
    if not has_eps:
        return connect(f)
    out = Fst(f.isyms, f.osyms)
    out.add_states(n)
    out.start = f.start
    for p in range(n):
        dist = _eps_distances(f, p)
        best: dict[tuple[int, int, int], float] = {}
        final = ZERO
        for q, d in dist.items():
            fw = f.finals.get(q)
            if fw is not None and d + fw < final:
                final = d + fw
            for a in f._arcs[q]:
                if a.ilabel == 0 and a.olabel == 0:
                    continue
                key = (a.ilabel, a.olabel, a.nextstate)
                w = d + a.weight
                if w < best.get(key, ZERO):
                    best[key] = w
        out._arcs[p] = [Arc(i, o, w, t) for (i, o, t), w in best.items()]
        if final < ZERO:
            out.finals[p] = final
    out._invalidate()
    return connect(out)


def _eps_distances(f: Fst, p: int) -> dict[int, float]:
    dist = {p: 0.0}
    heap = [(0.0, p)]
    done = set()
    while heap:
        d, q = heapq.heappop(heap)
        if q in done:
            continue
        done.add(q)
        for a in f._arcs[q]:
            if a.ilabel == 0 and a.olabel == 0:
                nd = d + a.weight
                if nd < dist.get(a.nextstate, ZERO):
                    dist[a.nextstate] = nd
                    heapq.heappush(heap, (nd, a.nextstate))
    return dist


def optimize(f: Fst) -> Fst:
    """Epsilon removal followed by trimming; the cheap clean-up used by the rule compiler."""
    return rm_epsilon(f)


# ---------------------------------------------------------------------------
# composition


def compose(a: Fst, b: Fst) -> Fst:
    """Relational composition with the three-state epsilon filter.

    Filter state 0 permits any move; 1 is entered after ``a`` moved alone on
    an output epsilon, 2 after ``b`` moved alone on an input epsilon. Mixing
    the two kinds of solo moves between real matches is blocked, so every
    pair of component paths yields exactly one composed path.
    """
    _check_tables(a.osyms, b.isyms, "compose")
    out = Fst(a.isyms, b.osyms)
    if a.start < 0 or b.start < 0:
        return empty_machine(a.isyms, b.osyms)
    bindex = b._index
    ids: dict[tuple[int, int, int], int] = {}
    queue: deque[tuple[int, int, int]] = deque()

    def state_of(q1, q2, filt):
        key = (q1, q2, filt)
        s = ids.get(key)
        if s is None:
            s = ids[key] = out.add_state()
            queue.append(key)
        return s

    out.set_start(state_of(a.start, b.start, 0))
    out_arcs = out._arcs
    afinals, bfinals = a.finals, b.finals
    while queue:
        q1, q2, filt = key = queue.popleft()
        s = ids[key]
        arcs = out_arcs[s]
        blabel, beps = bindex[q2]
        for e1 in a._arcs[q1]:
            if e1.olabel != 0:
                for e2 in blabel.get(e1.olabel, ()):
                    t = state_of(e1.nextstate, e2.nextstate, 0)
                    arcs.append(Arc(e1.ilabel, e2.olabel, e1.weight + e2.weight, t))
            else:
                if filt != 2:
                    t = state_of(e1.nextstate, q2, 1)
                    arcs.append(Arc(e1.ilabel, 0, e1.weight, t))
                if filt == 0:
                    for e2 in beps:
                        t = state_of(e1.nextstate, e2.nextstate, 0)
                        arcs.append(Arc(e1.ilabel, e2.olabel, e1.weight + e2.weight, t))
        if filt != 1:
            for e2 in beps:
                t = state_of(q1, e2.nextstate, 2)
                arcs.append(Arc(0, e2.olabel, e2.weight, t))
        w1 = afinals.get(q1)
        if w1 is not None:
            w2 = bfinals.get(q2)
            if w2 is not None:
                out.finals[s] = w1 + w2
    out._invalidate()
    return connect(out)


# ---------------------------------------------------------------------------
# shortest paths


def _distance_to_final(f: Fst) -> list[float]:
    n = f.num_states
    reverse: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for s in range(n):
        for a in f._arcs[s]:
            reverse[a.nextstate].append((s, a.weight))
    dist = [ZERO] * n
    heap = []
    for s, w in f.finals.items():
        dist[s] = w
        heap.append((w, s))
    heapq.heapify(heap)
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist[s]:
            continue
        for p, w in reverse[s]:
            nd = d + w
            if nd < dist[p]:
                dist[p] = nd
                heapq.heappush(heap, (nd, p))
    return dist


def _has_zero_cycle(f: Fst) -> bool:
    """True if some cycle uses only zero-cost arcs (iterative DFS colouring)."""
    n = f.num_states
    colour = [0] * n
    for root in range(n):
        if colour[root]:
            continue
        stack = [(root, iter(f._arcs[root]))]
        colour[root] = 1
        while stack:
            s, it = stack[-1]
            for a in it:
                if a.weight > 0.0:
                    continue
                if colour[a.nextstate] == 1:
                    return True
                if colour[a.nextstate] == 0:
                    colour[a.nextstate] = 1
                    stack.append((a.nextstate, iter(f._arcs[a.nextstate])))
                    break
            else:
                colour[s] = 2
                stack.pop()
    return False


def _key(w: float) -> float:
    # quantised so that equal-cost paths reached by different summation orders tie
    return round(w, 9)


def shortest_paths(f: Fst, n: int = 1, max_pops: int = 2_000_000) -> list[Path]:
    """Up to ``n`` distinct output strings in order of increasing weight.

    Each output string appears once, with its minimal weight. Equal weights
    are ordered lexicographically by output labels. Machines containing a
    zero-cost cycle are rejected.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if f.start < 0 or f.num_states == 0:
        return []
    if _has_zero_cycle(f):
        raise ValueError("shortest_paths: machine has a cycle of non-positive cost")
    h = _distance_to_final(f)
    if h[f.start] == ZERO:
        return []
    results: list[Path] = []
    seen: set[tuple[int, ...]] = set()
    # entries: (estimate, olabels, state, cost so far); state -1 marks a completed path
    heap = [(_key(h[f.start]), (), f.start, 0.0)]
    pops = 0
    while heap and len(results) < n and pops < max_pops:
        est, olabels, s, g = heapq.heappop(heap)
        pops += 1
        if s == -1:
            if olabels not in seen:
                seen.add(olabels)
                results.append(Path(olabels, g))
            continue
        fw = f.finals.get(s)
        if fw is not None:
            heapq.heappush(heap, (_key(g + fw), olabels, -1, g + fw))
        for a in f._arcs[s]:
            ht = h[a.nextstate]
            if ht == ZERO:
                continue
            ng = g + a.weight
            nol = olabels + (a.olabel,) if a.olabel else olabels
            heapq.heappush(heap, (_key(ng + ht), nol, a.nextstate, ng))
    return results


def transduce(tokens: Sequence[str], f: Fst) -> list[str] | None:
    """Output symbols of the best path for the input ``tokens``, or None."""
    lattice = compose(compile_linear(tokens, f.isyms), f)
    paths = shortest_paths(lattice, 1)
    if not paths:
        return None
    return [f.osyms.symbol(l) for l in paths[0].olabels]


def transduce_span(span: Sequence[str], f: Fst, separator: str = " ") -> list[str] | None:
    """Convert one tag-wrapped span; returns display tokens or None if rejected.

    Grammar outputs are pieces glued without spaces; the ``separator`` symbol
    splits the glued string into display tokens.
    """
    pieces = transduce(span, f)
    if pieces is None:
        return None
    return [t for t in "".join(pieces).split(separator) if t]


# ---------------------------------------------------------------------------
# binary serialization

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_ARC = struct.Struct("<IIfI")
_FINAL = struct.Struct("<If")


def _write_table(out: BinaryIO, table: SymbolTable):
    out.write(_U32.pack(len(table)))
    for sym in table:
        raw = sym.encode("utf-8")
        out.write(_U32.pack(len(raw)))
        out.write(raw)


def _read_exact(inp: BinaryIO, n: int) -> bytes:
    data = inp.read(n)
    if len(data) != n:
        raise FormatError("truncated FST data")
    return data


def _read_table(inp: BinaryIO) -> SymbolTable:
    (count,) = _U32.unpack(_read_exact(inp, 4))
    symbols = []
    for _ in range(count):
        (length,) = _U32.unpack(_read_exact(inp, 4))
        symbols.append(_read_exact(inp, length).decode("utf-8"))
    if symbols[:2] != [EPSILON, UNKNOWN]:
        raise FormatError("symbol table does not begin with epsilon and <unk>")
    return SymbolTable(symbols[2:])


def _start_first(f: Fst) -> Fst:
    """Renumber so that the start state is 0 (the file format has no start field)."""
    if f.start <= 0:
        return f
    s0 = f.start
    swap = {0: s0, s0: 0}
    out = Fst(f.isyms, f.osyms)
    order = [swap.get(s, s) for s in range(f.num_states)]
    out._arcs = [[Arc(a.ilabel, a.olabel, a.weight, swap.get(a.nextstate, a.nextstate)) for a in f._arcs[s]]
                 for s in order]
    out.finals = {swap.get(s, s): w for s, w in f.finals.items()}
    out.start = 0
    return out


def write_fst(f: Fst, out: BinaryIO):
    f = _start_first(f)
    out.write(MAGIC)
    out.write(_U16.pack(VERSION))
    _write_table(out, f.isyms)
    _write_table(out, f.osyms)
    out.write(_U32.pack(f.num_states))
    for arcs in f._arcs:
        out.write(_U32.pack(len(arcs)))
        for a in arcs:
            out.write(_ARC.pack(a.ilabel, a.olabel, a.weight, a.nextstate))
    finals = sorted(f.finals.items())
    out.write(_U32.pack(len(finals)))
    for s, w in finals:
        out.write(_FINAL.pack(s, w))


def read_fst(inp: BinaryIO, syms: SymbolTable | None = None) -> Fst:
    """Read a machine; if ``syms`` equals a stored table, that object is shared."""
    if _read_exact(inp, 4) != MAGIC:
        raise FormatError("not an FST file (bad magic)")
    (version,) = _U16.unpack(_read_exact(inp, 2))
    if version != VERSION:
        raise FormatError(f"unsupported FST version {version}")
    isyms = _read_table(inp)
    osyms = _read_table(inp)
    if syms is not None and isyms == syms:
        isyms = syms
    if osyms == isyms:
        osyms = isyms
    elif syms is not None and osyms == syms:
        osyms = syms
    f = Fst(isyms, osyms)
    (nstates,) = _U32.unpack(_read_exact(inp, 4))
    f.add_states(nstates)
    for s in range(nstates):
        (narcs,) = _U32.unpack(_read_exact(inp, 4))
        raw = _read_exact(inp, narcs * _ARC.size)
        f._arcs[s] = [Arc(i, o, float(w), t) for i, o, w, t in _ARC.iter_unpack(raw)]
    (nfinals,) = _U32.unpack(_read_exact(inp, 4))
    for _ in range(nfinals):
        s, w = _FINAL.unpack(_read_exact(inp, _FINAL.size))
        f.finals[s] = float(w)
    f.start = 0 if nstates else -1
    for arcs in f._arcs:
        for a in arcs:
            if a.nextstate >= nstates:
                raise FormatError("arc target out of range")
    return f


def dumps(f: Fst) -> bytes:
    buf = io.BytesIO()
    write_fst(f, buf)
    return buf.getvalue()


def loads(data: bytes, syms: SymbolTable | None = None) -> Fst:
    return read_fst(io.BytesIO(data), syms)
