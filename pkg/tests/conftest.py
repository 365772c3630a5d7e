import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from streamitn import rules


@pytest.fixture(scope="session")
def starter_pack():
    return rules.load_starter_pack()


@pytest.fixture(scope="session")
def small_lm(starter_pack):
    from streamitn import datagen, synth

    written = [s.text for s in synth.generate_written(600, seed=101)]
    return datagen.train_lexical_lm(written, starter_pack, extra=synth.lexical_lm_sentences())


@pytest.fixture(scope="session")
def small_corpus(starter_pack, small_lm, tmp_path_factory):
    """Written sentences, the TSV training file and the eval file for 400 sentences."""
    from streamitn import datagen, synth

    root = tmp_path_factory.mktemp("corpus")
    sents = synth.generate_written(400, seed=7)
    (root / "written.txt").write_text("".join(s.text + "\n" for s in sents))
    datagen.generate_corpus(root / "written.txt", starter_pack, small_lm, 3, root / "train.tsv",
                            test_out=root / "test.tsv", stats_out=root / "stats.json")
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
