"""Chunk-attention transformer tagger.

Position i attends to every position j < (floor(i/C) + 1) * C: its whole
chunk plus all earlier chunks (optionally capped to the last few). Tags for a
chunk are therefore final once the chunk is full, which is what the
streaming session exploits.
"""
from __future__ import annotations

import json
import math
import random
import struct
import zlib
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as Fn
from torch import nn

from .datagen import BLANK, TaggedSentence, tag_spans
from .errors import ConfigurationError, FormatError

PAD = "<pad>"
UNK = "<unk>"

_MAGIC = b"ITNT"
_VERSION = 1


@dataclass
class TaggerConfig:
    num_blocks: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    chunk_size: int = 6
    dropout: float = 0.1
    vocab_size: int = 2
    num_tags: int = 3
    max_position: int = 512
    history_chunks: int | None = None   # None = every past chunk

    def __post_init__(self):
        for name in ("num_blocks", "model_dim", "num_heads", "ffn_dim", "chunk_size", "max_position"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.model_dim % self.num_heads:
            raise ConfigurationError("model_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.history_chunks is not None and self.history_chunks < 0:
            raise ConfigurationError("history_chunks must be >= 0")


def chunk_mask(length: int, chunk: int, history_chunks: int | None = None) -> torch.Tensor:
    """Boolean [T, T]; True where query i may attend to key j."""
    idx = torch.arange(length)
    ci = idx // chunk
    allowed = idx[None, :] < ((ci + 1) * chunk)[:, None]
    if history_chunks is not None:
        allowed &= idx[None, :] >= ((ci - history_chunks) * chunk)[:, None]
    return allowed


def visible(i: int, chunk: int, length: int, history_chunks: int | None = None) -> range:
    """Key positions query ``i`` can see."""
    c = i // chunk
    lo = 0 if history_chunks is None else max(0, (c - history_chunks) * chunk)
    return range(lo, min(length, (c + 1) * chunk))


def receptive_field(length: int, chunk: int, num_blocks: int, history_chunks: int | None = None) -> torch.Tensor:
    """Boolean [T, T]; True where input j can influence output i through the whole stack.

    Without a history cap the chunk mask is transitive and this equals it; with
    a cap each extra block reaches ``history_chunks`` further back.
    """
    m = chunk_mask(length, chunk, history_chunks).long()
    reach = m.clone()
    for _ in range(num_blocks - 1):
        reach = ((reach @ m) > 0).long()
    return reach.bool()


class _Block(nn.Module):
    def __init__(self, cfg: TaggerConfig):
        super().__init__()
        self.heads = cfg.num_heads
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.qkv = nn.Linear(cfg.model_dim, 3 * cfg.model_dim)
        self.proj = nn.Linear(cfg.model_dim, cfg.model_dim)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.ff1 = nn.Linear(cfg.model_dim, cfg.ffn_dim)
        self.ff2 = nn.Linear(cfg.ffn_dim, cfg.model_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def _split(self, x):
        b, t, d = x.shape
        return x.view(b, t, self.heads, d // self.heads).transpose(1, 2)

    def attend(self, x, mask, past=None):
        """Pre-LN attention sub-layer. ``past`` is an optional (K, V) prefix.

        Returns the residual output and the full (K, V) including this call's keys.
        """
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        att = self.drop(torch.softmax(scores, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(x.shape)
        return x + self.drop(self.proj(y)), (k, v)

    def feed(self, x):
        return x + self.drop(self.ff2(self.drop(Fn.gelu(self.ff1(self.ln2(x))))))


class TaggerNet(nn.Module):
    def __init__(self, cfg: TaggerConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.model_dim)
        self.pos = nn.Embedding(cfg.max_position, cfg.model_dim)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.num_blocks))
        self.ln = nn.LayerNorm(cfg.model_dim)
        self.out = nn.Linear(cfg.model_dim, cfg.num_tags)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        """ids [B, T] -> tag log-probabilities [B, T, K]."""
        t = ids.shape[1]
        if t > self.cfg.max_position:
            raise ConfigurationError(f"sequence of {t} tokens exceeds max_position {self.cfg.max_position}; "
                                     "split the input into shorter segments")
        mask = chunk_mask(t, self.cfg.chunk_size, self.cfg.history_chunks).to(ids.device)[None, None]
        if pad is not None:
            mask = mask & ~pad[:, None, None, :]
        h = self.drop(self.embed(ids) + self.pos(torch.arange(t, device=ids.device))[None])
        for blk in self.blocks:
            h, _ = blk.attend(h, mask)
            h = blk.feed(h)
        return torch.log_softmax(self.out(self.ln(h)), dim=-1)


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        if self.itos[:2] != [PAD, UNK]:
            raise ConfigurationError("vocabulary must start with <pad>, <unk>")
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts = Counter(t for s in sentences for t in s)
        kept = sorted(t for t, n in counts.items() if n >= min_count and t not in (PAD, UNK))
        return cls([PAD, UNK, *kept])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 1) for t in tokens]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


class Tagger:
    """Network plus vocabulary and tag inventory."""

    def __init__(self, cfg: TaggerConfig, vocab: Vocab, inventory: Sequence[str], net: TaggerNet | None = None):
        if list(inventory[:1]) != [BLANK]:
            raise ConfigurationError("tag inventory must start with 'blank'")
        self.cfg = cfg
        self.vocab = vocab
        self.inventory = list(inventory)
        self.tag_index = {t: i for i, t in enumerate(self.inventory)}
        self.net = net or TaggerNet(cfg)
        self.net.eval()
        self.history: list[dict] = []

    @property
    def chunk_size(self) -> int:
        return self.cfg.chunk_size

    def log_probs(self, tokens: Sequence[str]) -> torch.Tensor:
        """[T, K] log-probabilities for one sentence (no dropout)."""
        if not tokens:
            raise ValueError("cannot tag an empty sequence")
        ids = torch.tensor([self.vocab.encode(tokens)])
        self.net.eval()
        with torch.no_grad():
            return self.net(ids)[0]

    def tag(self, tokens: Sequence[str]) -> list[str]:
        if not tokens:
            return []
        return [self.inventory[k] for k in self.log_probs(tokens).argmax(-1).tolist()]

    def open_stream(self) -> "TagStream":
        return TagStream(self)

    def with_chunk(self, chunk: int) -> "Tagger":
        """Same weights under a different chunk mask (inference only)."""
        cfg = TaggerConfig(**{**asdict(self.cfg), "chunk_size": chunk})
        net = TaggerNet(cfg)
        net.load_state_dict(self.net.state_dict())
        return Tagger(cfg, self.vocab, self.inventory, net)


class TagStream:
    """Incremental tagging. ``push`` returns (token, tag, emit_latency) for every
    token whose chunk just completed; ``flush`` handles a partial last chunk."""

    def __init__(self, tagger: Tagger):
        self.tagger = tagger
        self.reset()

    def reset(self):
        self.pending: list[str] = []
        self.past: list[tuple[torch.Tensor, torch.Tensor]] | None = None
        self.position = 0

    def push(self, token: str) -> list[tuple[str, str, int]]:
        self.pending.append(token)
        if len(self.pending) == self.tagger.chunk_size:
            return self._run()
        return []

    def flush(self) -> list[tuple[str, str, int]]:
        out = self._run() if self.pending else []
        self.reset()
        return out

    def _run(self) -> list[tuple[str, str, int]]:
        tg, cfg = self.tagger, self.tagger.cfg
        toks, self.pending = self.pending, []
        n = len(toks)
        if self.position + n > cfg.max_position:
            raise ConfigurationError(f"stream longer than max_position {cfg.max_position}; flush between sentences")
        net = tg.net
        net.eval()
        with torch.no_grad():
            ids = torch.tensor([tg.vocab.encode(toks)])
            h = net.embed(ids) + net.pos(torch.arange(self.position, self.position + n))[None]
            new_past = []
            for b, blk in enumerate(net.blocks):
                past = self.past[b] if self.past is not None else None
                h, kv = blk.attend(h, None, past)
                h = blk.feed(h)
                new_past.append(kv)
            logp = torch.log_softmax(net.out(net.ln(h)), dim=-1)[0]
        self.past = self._trim(new_past)
        self.position += n
        tags = logp.argmax(-1).tolist()
        return [(t, tg.inventory[k], n - 1 - i) for i, (t, k) in enumerate(zip(toks, tags))]

    def _trim(self, kvs):
        keep = self.tagger.cfg.history_chunks
        if keep is None:
            return kvs
        limit = keep * self.tagger.chunk_size
        if limit == 0:
            return None
        return [(k[:, :, -limit:], v[:, :, -limit:]) for k, v in kvs]


def stream_tag(tagger: Tagger, tokens: Iterable[str]) -> list[tuple[str, str, int]]:
    s = tagger.open_stream()
    out = []
    for t in tokens:
        out += s.push(t)
    return out + s.flush()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    warmup: int = 200
    lr_scale: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    split_seed: int = 0
    heldout: float = 0.1
    min_count: int = 1


def noam_rate(step: int, dim: int, warmup: int, scale: float = 1.0) -> float:
    step = max(step, 1)
    return scale * dim ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def span_prf(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Exact-match span precision/recall/F1 over tag sequences."""
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        gs, ps = set(tag_spans(g)), set(tag_spans(p))
        tp += len(gs & ps)
        fp += len(ps - gs)
        fn += len(gs - ps)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def split_indices(n: int, heldout: float, seed: int) -> tuple[list[int], list[int]]:
    """Sorted (train, held-out) sentence indices; the same seed gives the same split."""
    idx = list(range(n))
    random.Random(seed).shuffle(idx)
    n_held = max(1, int(round(n * heldout))) if n > 1 and heldout > 0 else 0
    return sorted(idx[n_held:]), sorted(idx[:n_held])


def split_data(data: Sequence[TaggedSentence], heldout: float, seed: int):
    train_idx, held = split_indices(len(data), heldout, seed)
    return [data[i] for i in train_idx], [data[i] for i in held]


def _batches(data, vocab, tag_index, batch_size, rng):
    order = list(range(len(data)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        group = [data[i] for i in order[start:start + batch_size]]
        width = max(len(s.tokens) for s in group)
        ids = torch.zeros(len(group), width, dtype=torch.long)
        gold = torch.full((len(group), width), -100, dtype=torch.long)
        for r, s in enumerate(group):
            ids[r, :len(s.tokens)] = torch.tensor(vocab.encode(s.tokens))
            gold[r, :len(s.tags)] = torch.tensor([tag_index[t] for t in s.tags])
        yield ids, gold, ids == 0


def evaluate_tags(tagger: Tagger, data: Sequence[TaggedSentence]) -> dict:
    pred = [tagger.tag(s.tokens) for s in data]
    gold = [s.tags for s in data]
    p, r, f = span_prf(gold, pred)
    n = sum(len(g) for g in gold)
    acc = sum(a == b for g, q in zip(gold, pred) for a, b in zip(g, q)) / max(n, 1)
    return {"precision": p, "recall": r, "f1": f, "accuracy": acc}


def train(data: Sequence[TaggedSentence], cfg: TaggerConfig, hyper: TrainConfig | None = None,
          inventory: Sequence[str] | None = None, log: Callable[[dict], None] | None = None) -> Tagger:
    """Train with AdamW + noam schedule; keep the epoch with best held-out span F1."""
    hyper = hyper or TrainConfig()
    if not data:
        raise ConfigurationError("cannot train a tagger on an empty corpus")
    if inventory is None:
        cats = sorted({t.lstrip("_") for s in data for t in s.tags if t != BLANK})
        inventory = [BLANK] + [x for c in cats for x in (c, "_" + c)]
    tag_index = {t: i for i, t in enumerate(inventory)}
    for n, s in enumerate(data):
        for t in s.tags:
            if t not in tag_index:
                raise ConfigurationError(f"sentence {n} has tag {t!r} outside the inventory")
    train_set, held = split_data(data, hyper.heldout, hyper.split_seed)
    if not train_set:
        train_set = list(data)
    held = held or train_set
    vocab = Vocab.build((s.tokens for s in train_set), hyper.min_count)
    cfg = TaggerConfig(**{**asdict(cfg), "vocab_size": len(vocab), "num_tags": len(inventory),
                          "max_position": max(cfg.max_position, max(len(s.tokens) for s in data))})

    torch.manual_seed(hyper.seed)
    rng = random.Random(hyper.seed)
    net = TaggerNet(cfg)
    tagger = Tagger(cfg, vocab, inventory, net)
    opt = torch.optim.AdamW(net.parameters(), lr=1.0, betas=(0.9, 0.98), eps=1e-9,
                            weight_decay=hyper.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: noam_rate(step + 1, cfg.model_dim, hyper.warmup, hyper.lr_scale))
    best_f1, best_state = -1.0, None
    for epoch in range(1, hyper.epochs + 1):
        net.train()
        losses = []
        for ids, gold, pad in _batches(train_set, vocab, tag_index, hyper.batch_size, rng):
            logp = net(ids, pad)
            loss = Fn.nll_loss(logp.reshape(-1, logp.shape[-1]), gold.reshape(-1), ignore_index=-100)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            losses.append(loss.item())
        net.eval()
        metrics = evaluate_tags(tagger, held)
        row = {"epoch": epoch, "loss": sum(losses) / len(losses), "losses": losses, **metrics}
        tagger.history.append(row)
        if log is not None:
            log(row)
        if metrics["f1"] > best_f1 or best_state is None:
            best_f1 = metrics["f1"]
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    net.load_state_dict(best_state)
    net.eval()
    return tagger


# ---------------------------------------------------------------------------
# gradient check


def gradient_check(net: TaggerNet, ids: torch.Tensor, gold: torch.Tensor, n_params: int = 100,
                   eps: float = 1e-6, seed: int = 0) -> list[tuple[float, float, float]]:
    """Central differences vs autograd on ``n_params`` sampled scalars (float64, no dropout).

    Returns (analytic, numeric, relative error) per sampled scalar.
    """
    net = net.double()
    net.eval()

    def loss_fn():
        logp = net(ids)
        return Fn.nll_loss(logp.reshape(-1, logp.shape[-1]), gold.reshape(-1))

    net.zero_grad()
    loss_fn().backward()
    params = [p for p in net.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = random.Random(seed)
    picks = rng.sample(range(total), min(n_params, total))
    out = []
    with torch.no_grad():
        for flat in picks:
            k = 0
            while flat >= sizes[k]:
                flat -= sizes[k]
                k += 1
            p = params[k].view(-1)
            analytic = params[k].grad.view(-1)[flat].item()
            orig = p[flat].item()
            p[flat] = orig + eps
            plus = loss_fn().item()
            p[flat] = orig - eps
            minus = loss_fn().item()
            p[flat] = orig
            numeric = (plus - minus) / (2 * eps)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            out.append((analytic, numeric, rel))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def dumps(tagger: Tagger) -> bytes:
    state = tagger.net.state_dict()
    header = {
        "config": asdict(tagger.cfg),
        "vocab": tagger.vocab.itos,
        "inventory": tagger.inventory,
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    parts = [_MAGIC, struct.pack("<HI", _VERSION, len(blob)), blob]
    for name, t in state.items():
        parts.append(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> Tagger:
    import numpy as np

    if len(data) < 14 or data[:4] != _MAGIC:
        raise FormatError("not a tagger checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("tagger checkpoint checksum mismatch (file corrupted or truncated)")
    version, hlen = struct.unpack("<HI", body[4:10])
    if version != _VERSION:
        raise FormatError(f"unsupported tagger checkpoint version {version}")
    header = json.loads(body[10:10 + hlen].decode("utf-8"))
    cfg = TaggerConfig(**header["config"])
    net = TaggerNet(cfg)
    offset = 10 + hlen
    state = {}
    for name, shape in header["tensors"]:
        n = math.prod(shape)
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * n
    if offset != len(body):
        raise FormatError("tagger checkpoint has trailing bytes")
    net.load_state_dict(state)
    return Tagger(cfg, Vocab(header["vocab"]), header["inventory"], net)


def save(tagger: Tagger, path: str | Path) -> None:
    Path(path).write_bytes(dumps(tagger))


def load(path: str | Path) -> Tagger:
    return loads(Path(path).read_bytes())


def build_tagger(cfg: TaggerConfig, vocab: Vocab, inventory: Sequence[str], seed: int = 0) -> Tagger:
    """Untrained tagger with seeded initialization (handy for tests)."""
    cfg = TaggerConfig(**{**asdict(cfg), "vocab_size": len(vocab), "num_tags": len(inventory)})
    torch.manual_seed(seed)
    return Tagger(cfg, vocab, inventory, TaggerNet(cfg))
