import random
import threading

import pytest

from streamitn import datagen, fst as F, pipeline as P, tagger as T
from streamitn.errors import ConfigurationError


@pytest.fixture(scope="module")
def inventory(starter_pack):
    return datagen.tag_inventory(starter_pack.categories)


def scripted(pack, tags, chunk=1, **kw):
    tg = P.ScriptedTagger(datagen.tag_inventory(pack.categories), chunk)
    tg.script = list(tags)
    return P.ItnEngine(tg, pack, **kw)


def stream(engine, tokens):
    s = engine.open_session()
    out = []
    for t in tokens:
        out += s.push(t)
    return out + s.flush()


class TestScripted:
    @pytest.mark.parametrize("chunk", [1, 2, 3, 6])
    def test_at_four_thirty(self, starter_pack, chunk):
        eng = scripted(starter_pack, ["blank", "time", "_time"], chunk)
        assert stream(eng, "at four thirty".split()) == ["at", "4:30"]

    def test_that_will_be(self, starter_pack):
        eng = scripted(starter_pack, ["blank"] * 3 + ["num", "_num"])
        assert eng.convert("that will be four fifty") == "that will be 450"

    def test_money(self, starter_pack):
        eng = scripted(starter_pack, ["money", "_money", "_money", "blank"])
        assert eng.convert("twenty five dollars please") == "$25.00 please"

    def test_blank_identity(self, starter_pack):
        eng = scripted(starter_pack, [])
        assert eng.convert("hello there four thirty") == "hello there four thirty"

    def test_empty(self, starter_pack):
        assert scripted(starter_pack, []).convert("") == ""
        assert scripted(starter_pack, []).open_session().flush() == []

    def test_flush_closes_span(self, starter_pack):
        eng = scripted(starter_pack, ["time", "_time"])
        s = eng.open_session()
        assert s.push("four") == []
        assert s.push("thirty") == []
        assert s.flush() == ["4:30"]

    def test_release_on_close(self, starter_pack):
        eng = scripted(starter_pack, ["time", "_time", "blank", "blank"])
        s = eng.open_session()
        assert s.push("four") == [] and s.push("thirty") == []
        assert s.push("see") == ["4:30", "see"]

    def test_phone_force_close(self, starter_pack):
        toks = "two oh six five five five one two three four".split()
        eng = scripted(starter_pack, ["phone"] + ["_phone"] * 9)
        s = eng.open_session()
        released = [s.push(t) for t in toks]
        assert released[-1] == ["206-555-1234"]
        assert s.flush() == []

    def test_span_over_limit(self, starter_pack):
        toks = "two oh six five five five one two three four five".split()
        eng = scripted(starter_pack, ["phone"] + ["_phone"] * 10)
        s = eng.open_session()
        out = stream(eng, toks)
        assert out == ["206-555-1234", "five"]

    def test_adjacent_spans(self, starter_pack):
        eng = scripted(starter_pack, ["num", "time", "_time"])
        assert eng.convert("five four thirty") == "5 4:30"

    def test_fallback(self, starter_pack):
        eng = scripted(starter_pack, ["blank", "time", "_time"])
        assert eng.convert("at banana split") == "at banana split"

    def test_orphan_continuation(self, starter_pack):
        eng = scripted(starter_pack, ["blank", "_time", "_time"])
        s = eng.open_session()
        out = [x for t in "at four thirty".split() for x in s.push(t)] + s.flush()
        assert out == ["at", "four", "thirty"]
        assert s.orphans == 2

    def test_convert_tagged(self, starter_pack):
        eng = scripted(starter_pack, [])
        assert eng.convert_tagged("at four thirty".split(), ["blank", "time", "_time"]) == "at 4:30"


def random_tags(rng, n, cats):
    tags = []
    for i in range(n):
        r = rng.random()
        if r < 0.5:
            tags.append("blank")
        elif r < 0.7 or not tags:
            tags.append(rng.choice(cats))
        else:
            prev = tags[-1].lstrip("_")
            tags.append("_" + (prev if prev != "blank" else rng.choice(cats)))
    return tags


WORDS = "at four thirty five twenty dollars please one oh two see you b twelve hundred and percent".split()


def test_provenance_no_hallucination(starter_pack):
    rng = random.Random(0)
    cats = ["time", "num", "money", "alnum", "percent"]
    for _ in range(300):
        toks = [rng.choice(WORDS) for _ in range(rng.randint(0, 12))]
        tags = random_tags(rng, len(toks), cats)
        eng = scripted(starter_pack, tags, chunk=rng.choice([1, 3]))
        s = eng.open_session()
        out = [x for t in toks for x in s.push(t)] + s.flush()
        assert len(out) == len(s.provenance)
        for word, prov in zip(out, s.provenance):
            if prov.kind == "copy":
                assert prov.end == prov.start + 1 and word == toks[prov.start]
            else:
                expected = F.transduce_span([f"<{prov.category}>", *toks[prov.start:prov.end],
                                             f"</{prov.category}>"], starter_pack.itn[prov.category])
                assert expected is not None and word in expected


def test_latency_bound(starter_pack):
    rng = random.Random(1)
    cats = ["time", "phone", "num"]
    for chunk in (1, 2, 4, 6):
        for _ in range(50):
            n = rng.randint(1, 30)
            toks = [rng.choice(WORDS) for _ in range(n)]
            eng = scripted(starter_pack, random_tags(rng, n, cats), chunk=chunk)
            s = eng.open_session()
            released_at = []
            for k, t in enumerate(toks):
                before = len(s.provenance)
                s.push(t)
                released_at += [k] * (len(s.provenance) - before)
            for prov, when in zip(s.provenance, released_at):
                assert when - (prov.end - 1) <= (chunk - 1) + eng.max_span


class TestCache:
    def test_lru_eviction(self):
        c = P.SpanCache(2)
        c.put("a", 1)
        c.put("b", 2)
        assert c.get("a") == 1
        c.put("c", 3)
        assert "b" not in c and "a" in c and "c" in c
        assert len(c) == 2

    def test_zero_capacity(self):
        c = P.SpanCache(0)
        c.put("a", 1)
        assert c.get("a") is None and len(c) == 0

    def test_transparent(self, starter_pack):
        rng = random.Random(2)
        cats = ["time", "num", "money", "alnum"]
        tg = P.ScriptedTagger(datagen.tag_inventory(starter_pack.categories), 3)
        on = P.ItnEngine(tg, starter_pack, cache_capacity=8)
        off = P.ItnEngine(tg, starter_pack, use_cache=False)
        for _ in range(300):
            toks = [rng.choice(WORDS[:8]) for _ in range(rng.randint(1, 8))]
            tg.script = random_tags(rng, len(toks), cats)
            assert on.convert(toks) == off.convert(toks)
        assert len(on.cache) <= 8 and on.cache.hits > 0

    def test_values_match_fresh(self, starter_pack):
        eng = scripted(starter_pack, [])
        rng = random.Random(3)
        for _ in range(100):
            cat = rng.choice(["time", "num"])
            eng.transduce(cat, [rng.choice(WORDS[:4]) for _ in range(rng.randint(1, 3))])
        for (cat, toks), value in list(eng.cache._data.items()):
            fresh = F.transduce_span([f"<{cat}>", *toks, f"</{cat}>"], starter_pack.itn[cat])
            assert value == (None if fresh is None else tuple(fresh))

    def test_concurrent_sessions(self, starter_pack):
        tg = P.ScriptedTagger(datagen.tag_inventory(starter_pack.categories), 1)
        tg.script = ["blank", "time", "_time"]
        eng = P.ItnEngine(tg, starter_pack, cache_capacity=4)
        results = []

        def work():
            for _ in range(50):
                results.append(eng.convert("at four thirty"))

        threads = [threading.Thread(target=work) for _ in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert set(results) == {"at 4:30"}


@pytest.fixture(scope="module")
def engine(starter_pack):
    inv = datagen.tag_inventory(starter_pack.categories)
    cfg = T.TaggerConfig(num_blocks=1, model_dim=16, num_heads=2, ffn_dim=32, chunk_size=3, dropout=0.0)
    tg = T.build_tagger(cfg, T.Vocab(["<pad>", "<unk>", *WORDS]), inv, seed=1)
    return P.ItnEngine(tg, starter_pack)


class TestWithModel:
    def test_stream_equals_batch_and_offline(self, engine):
        rng = random.Random(4)
        for _ in range(200):
            toks = [rng.choice(WORDS) for _ in range(rng.randint(0, 15))]
            batch = engine.convert(toks)
            assert " ".join(stream(engine, toks)) == batch
            assert engine.convert_tagged(toks, engine.tagger.tag(toks)) == batch

    def test_inventory_mismatch(self, starter_pack):
        cfg = T.TaggerConfig(num_blocks=1, model_dim=16, num_heads=2, ffn_dim=32)
        tg = T.build_tagger(cfg, T.Vocab(["<pad>", "<unk>"]), ["blank", "time", "_time"])
        with pytest.raises(ConfigurationError, match="inventory"):
            P.ItnEngine(tg, starter_pack)

    def test_swap_pack_resets_cache(self, engine, starter_pack):
        engine.transduce("time", ["four", "thirty"])
        assert len(engine.cache) > 0
        engine.swap_pack(starter_pack)
        assert len(engine.cache) == 0
