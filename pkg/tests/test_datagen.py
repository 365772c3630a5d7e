import json
from collections import Counter

import pytest

from streamitn import datagen, fst as F, ngram, rules, synth
from streamitn.errors import FormatError


@pytest.fixture(scope="module")
def lexical_lm(starter_pack):
    written = [s.text for s in synth.generate_written(1500, seed=11)]
    return datagen.train_lexical_lm(written, starter_pack, extra=synth.lexical_lm_sentences())


@pytest.fixture(scope="module")
def norm(starter_pack, lexical_lm):
    return datagen.Normalizer(starter_pack, lexical_lm)


class TestTrainingPairs:
    def test_money_please_example(self):
        s = datagen.to_training_pairs("<money> twenty five dollars </money> please")
        assert s.tokens == ["twenty", "five", "dollars", "please"]
        assert s.tags == ["money", "_money", "_money", "blank"]

    def test_untagged(self):
        assert datagen.to_training_pairs("hello world").tags == ["blank", "blank"]

    def test_adjacent_spans(self):
        s = datagen.to_training_pairs("<num> five </num> <time> four thirty </time>")
        assert s.tags == ["num", "time", "_time"]

    @pytest.mark.parametrize("bad, needle", [
        ("<num> five", "never closed"),
        ("<num> <time> five </time> </num>", "inside unclosed <num>"),
        ("five </num>", "no open span"),
        ("<num> five </time>", "does not match <num>"),
        ("<num> </num>", "empty span"),
    ])
    def test_malformed(self, bad, needle):
        with pytest.raises(FormatError, match=needle):
            datagen.to_training_pairs(bad)

    def test_xml_round_trip(self):
        xml = "at <time> four thirty </time> <num> five </num> ok"
        assert datagen.to_xml(datagen.to_training_pairs(xml)) == xml


def test_inventory(starter_pack):
    inv = datagen.tag_inventory(starter_pack.categories)
    assert len(inv) == 33 and inv[0] == "blank"
    assert inv[1:3] == ["abbreviation", "_abbreviation"]


class TestNormalize:
    def test_money(self, norm):
        assert norm.normalize("$25.00 please") == "<money> twenty five dollars </money> please"

    def test_hwy_vs_dalmatians(self, norm):
        assert norm.normalize("hwy 101") == "hwy <alnum> one oh one </alnum>"
        assert norm.normalize("101 dalmatians") == "<num> one hundred and one </num> dalmatians"

    def test_module_function(self, starter_pack, lexical_lm):
        assert datagen.normalize("$25.00 please", starter_pack, lexical_lm, 3) == \
            "<money> twenty five dollars </money> please"

    def test_no_match_passes_through(self, norm):
        assert norm.normalize("hello there world") == "hello there world"

    def test_alternates_are_pseudorandom(self, norm):
        seen = Counter()
        for seed in range(1000):
            seen[norm.normalize("1:45", seed)] += 1
        quarter = seen["<time> quarter to two </time>"]
        clock = seen["<time> one forty five </time>"]
        assert quarter + clock == 1000
        assert quarter >= 200 and clock >= 200

    def test_seed_reproducible(self, norm):
        assert norm.normalize("meet at 1:45 or 2:30", 5) == norm.normalize("meet at 1:45 or 2:30", 5)

    def test_seeds_differ_only_in_alternates(self, norm):
        a = datagen.to_training_pairs(norm.normalize("meet at 1:45 and pay $3.50", 1))
        b = datagen.to_training_pairs(norm.normalize("meet at 1:45 and pay $3.50", 2))
        assert [c for c, _, _ in a.spans()] == [c for c, _, _ in b.spans()]

    def test_longest_match(self, norm):
        out = norm.normalize("call me at 4:30 pm today")
        assert "</time> today" in out and "p m </time>" in out

    def test_span_limit(self, starter_pack):
        n = datagen.Normalizer(starter_pack, max_lexical=2)
        assert n.normalize("$25.00") == "$25.00"


def test_round_trip_of_generated_spans(starter_pack, norm):
    """Every tagged span converts back, via ITN, to a written form TN accepts."""
    sents = synth.generate_written(300, seed=4)
    for i, s in enumerate(sents):
        tagged = datagen.to_training_pairs(norm.normalize(s.text, i))
        datagen.check_well_formed(tagged, datagen.tag_inventory(starter_pack.categories))
        for cat, a, b in tagged.spans():
            span = [f"<{cat}>", *tagged.tokens[a:b], f"</{cat}>"]
            written = F.transduce_span(span, starter_pack.itn[cat])
            assert written is not None
            tn = rules.strip_markers(starter_pack.tn[cat])
            lattice = F.compose(F.compile_linear(list(" ".join(written)), starter_pack.syms), tn)
            outs = [[starter_pack.syms.symbol(l) for l in p.olabels] for p in F.shortest_paths(lattice, 200)]
            assert span in outs


class TestCorpus:
    def test_plain_lines(self, tmp_path, starter_pack, lexical_lm):
        src = tmp_path / "in.txt"
        src.write_text("hello world\nhow are you\ngood night\n")
        stats = datagen.generate_corpus(src, starter_pack, lexical_lm, 0, tmp_path / "out.tsv")
        assert stats["sentences"] == 3
        assert sum(stats["categories"].values()) == 0
        sents = datagen.read_tagged_tsv(tmp_path / "out.tsv")
        assert [set(s.tags) for s in sents] == [{"blank"}] * 3

    def test_money_amounts(self, tmp_path, starter_pack, lexical_lm):
        import random
        rng = random.Random(0)
        src = tmp_path / "money.txt"
        src.write_text("".join(f"{synth.VALUES['money'](rng)}\n" for _ in range(1000)))
        stats = datagen.generate_corpus(src, starter_pack, lexical_lm, 0, tmp_path / "out.tsv")
        assert stats["categories"]["money"] == 1000

    def test_mixed_counts_match_construction(self, tmp_path, starter_pack, lexical_lm):
        sents = synth.generate_written(800, seed=21)
        src = tmp_path / "mixed.txt"
        src.write_text("".join(s.text + "\n" for s in sents))
        stats = datagen.generate_corpus(src, starter_pack, lexical_lm, 7, tmp_path / "out.tsv",
                                        stats_out=tmp_path / "stats.json")
        expected = synth.construction_counts(sents)
        assert stats["categories"] == {c: expected.get(c, 0) for c in starter_pack.categories}
        assert json.loads((tmp_path / "stats.json").read_text()) == stats

    def test_byte_identical(self, tmp_path, starter_pack, lexical_lm):
        src = tmp_path / "in.txt"
        src.write_text("".join(s.text + "\n" for s in synth.generate_written(100, seed=2)))
        datagen.generate_corpus(src, starter_pack, lexical_lm, 9, tmp_path / "a.tsv", tmp_path / "a.test")
        datagen.generate_corpus(src, starter_pack, lexical_lm, 9, tmp_path / "b.tsv", tmp_path / "b.test")
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
        assert (tmp_path / "a.test").read_bytes() == (tmp_path / "b.test").read_bytes()

    def test_test_file_columns(self, tmp_path, starter_pack, lexical_lm):
        src = tmp_path / "in.txt"
        src.write_text("$25.00 please\n")
        datagen.generate_corpus(src, starter_pack, lexical_lm, 0, tmp_path / "o.tsv", tmp_path / "o.test")
        assert (tmp_path / "o.test").read_text() == \
            "twenty five dollars please\t$25.00 please\tmoney _money _money blank\n"

    def test_missing_input(self, tmp_path, starter_pack):
        with pytest.raises(OSError, match="nope.txt"):
            datagen.generate_corpus(tmp_path / "nope.txt", starter_pack, None, 0, tmp_path / "o.tsv")


def test_well_formed_rejects_orphan():
    with pytest.raises(FormatError):
        datagen.check_well_formed(datagen.TaggedSentence(["a", "b"], ["blank", "_num"]))


def test_read_tsv_rejects_bad_rows(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\tblank\nb\n")
    with pytest.raises(FormatError, match=":2:"):
        datagen.read_tagged_tsv(p)


def test_generator_values_accepted(starter_pack):
    """Each category's value generator yields strings its own TN machine accepts."""
    import random
    rng = random.Random(1)
    norm = datagen.Normalizer(starter_pack)
    for cat, gen in synth.VALUES.items():
        for _ in range(40):
            value = gen(rng)
            assert norm.candidates(cat, value), (cat, value)
