import io
import json
import subprocess
import sys

import pytest

from streamitn import cli, rules, tagger as T

GRAMMARS = str(rules.starter_pack_dir())


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(small_corpus, tmp_path_factory):
    """Small trained model plus display LM, shared by the run/eval/bench tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.txt"
    cfg.write_text("# tiny\nepochs = 3\nchunk_size = 3\nmodel_dim = 32\nffn_dim = 64\nwarmup = 20\n")
    assert cli.main(["train", "--data", str(small_corpus / "train.tsv"), "--config", str(cfg),
                     "--out", str(root / "m.itnt")]) == 0
    assert cli.main(["train-lm", "--kind", "display", "--in", str(small_corpus / "written.txt"),
                     "--out", str(root / "disp.lm")]) == 0
    return root


def test_compile_starter_pack(tmp_path, capsys):
    code, out, _ = run(["compile-rules", "--pack", GRAMMARS, "--out", tmp_path / "pack"], capsys)
    assert code == 0
    assert "16 categories compiled" in out
    assert (tmp_path / "pack" / "manifest.json").exists()


def test_compile_empty_dir(tmp_path, capsys):
    code, _, err = run(["compile-rules", "--pack", tmp_path], capsys)
    assert code == 2 and "no categories" in err


def test_compile_broken_file_reports_all(tmp_path, capsys):
    (tmp_path / "a.rules").write_text('root = "one":"1" ;\n')
    (tmp_path / "b.rules").write_text('root = ( "two":"2" ;\n')
    (tmp_path / "c.rules").write_text('root = missing ;\n')
    code, _, err = run(["compile-rules", "--pack", tmp_path], capsys)
    assert code == 2
    assert "b.rules:1:" in err and "c.rules" in err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench", "--model", "x", "--lengths", "a,b"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1


def test_synth_and_gen_data_reproducible(tmp_path, small_lm, capsys):
    lm_path = tmp_path / "lex.lm"
    small_lm.save(lm_path)
    for k in (1, 2):
        assert run(["synth", "--n", 60, "--seed", 5, "--out", tmp_path / f"w{k}.txt"], capsys)[0] == 0
        code, out, _ = run(["gen-data", "--lm", lm_path, "--in", tmp_path / f"w{k}.txt",
                            "--out", tmp_path / f"t{k}.tsv", "--test-out", tmp_path / f"e{k}.tsv",
                            "--seed", 9], capsys)
        assert code == 0
        assert json.loads(out)["sentences"] == 60
    assert (tmp_path / "w1.txt").read_bytes() == (tmp_path / "w2.txt").read_bytes()
    assert (tmp_path / "t1.tsv").read_bytes() == (tmp_path / "t2.tsv").read_bytes()
    assert (tmp_path / "e1.tsv").read_bytes() == (tmp_path / "e2.tsv").read_bytes()


def test_gen_data_missing_input(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen-data", "--in", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o.tsv")])
    assert exc.value.code == 1


def test_train_lm_lexical(tmp_path, small_corpus, capsys):
    code, out, _ = run(["train-lm", "--kind", "lexical", "--in", small_corpus / "written.txt",
                        "--out", tmp_path / "l.lm", "--order", 3], capsys)
    assert code == 0 and "3-gram lexical" in out
    assert (tmp_path / "l.lm").read_text().startswith("#streamitn-ngram")


def test_trained_model_uses_config(workdir):
    model = T.load(workdir / "m.itnt")
    assert model.chunk_size == 3 and model.cfg.model_dim == 32


def test_train_bad_config(tmp_path, small_corpus, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("learning_speed = 3\n")
    code, _, err = run(["train", "--data", small_corpus / "train.tsv", "--config", cfg,
                        "--out", tmp_path / "m.itnt"], capsys)
    assert code == 2 and "unknown setting" in err


def test_train_reproducible(tmp_path, small_corpus, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("epochs = 1\nmodel_dim = 16\nffn_dim = 32\nnum_heads = 2\n")
    outs = []
    for k in (1, 2):
        code, out, _ = run(["train", "--data", small_corpus / "train.tsv", "--config", cfg, "--seed", 4,
                            "--out", tmp_path / f"m{k}.itnt"], capsys)
        assert code == 0 and "epoch   1" in out
        outs.append((tmp_path / f"m{k}.itnt").read_bytes())
    assert outs[0] == outs[1]


def test_read_config_values(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("chunk_size = 11  # wide\nhistory_chunks = none\nlr_scale = 0.5\n\n")
    cfg, hyper = cli.read_config(p)
    assert cfg.chunk_size == 11 and cfg.history_chunks is None and hyper.lr_scale == 0.5


def test_run_batch_and_stream_agree(workdir, monkeypatch, capsys):
    text = "see you at four thirty\nplay some music\n"
    monkeypatch.setattr(sys, "stdin", io.StringIO(text))
    code, batch, _ = run(["run", "--model", workdir / "m.itnt"], capsys)
    assert code == 0
    lines = batch.splitlines()
    assert len(lines) == 2 and lines[1] == "play some music"
    streamed = "".join(t + "\n" for line in text.splitlines() for t in line.split() + [""])
    monkeypatch.setattr(sys, "stdin", io.StringIO(streamed))
    code, out, _ = run(["run", "--model", workdir / "m.itnt", "--stream"], capsys)
    assert code == 0
    utterances = [u.split("\n") for u in out.strip("\n").split("\n\n")]
    assert [" ".join(u) for u in utterances] == lines


def test_run_chunk_mismatch(workdir, monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO("four thirty\n"))
    code, _, err = run(["run", "--model", workdir / "m.itnt", "--chunk", 2], capsys)
    assert code == 1 and "--force" in err
    monkeypatch.setattr(sys, "stdin", io.StringIO("four thirty\n"))
    code, out, _ = run(["run", "--model", workdir / "m.itnt", "--chunk", 2, "--force"], capsys)
    assert code == 0 and out.strip()


def test_eval_oracle_tags(small_corpus, tmp_path, capsys):
    code, out, _ = run(["eval", "--oracle-tags", "--test", small_corpus / "test.tsv",
                        "--json", tmp_path / "r.json"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["f1"] == 1.0 and doc["fp"] == 0 and doc["fn"] == 0
    assert "oracle-tags" in out


def test_eval_model_and_baseline(workdir, small_corpus, capsys):
    code, out, _ = run(["eval", "--model", workdir / "m.itnt", "--test", small_corpus / "test.tsv",
                        "--baseline", "wfst-ngram", "--lm", workdir / "disp.lm", "--nbest", 4], capsys)
    assert code == 0
    doc = json.loads(out[out.index("["):])
    assert [d["system"] for d in doc] == ["streaming", "wfst-ngram"]
    for d in doc:
        assert 0.0 <= d["f1"] <= 1.0 and d["sentences"] == 400


def test_eval_needs_something(small_corpus, capsys):
    code, _, err = run(["eval", "--test", small_corpus / "test.tsv"], capsys)
    assert code == 1 and "nothing to evaluate" in err


def test_eval_bad_test_file(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("one column only\n")
    code, _, err = run(["eval", "--oracle-tags", "--test", bad], capsys)
    assert code == 2 and "bad.tsv:1:" in err


def test_bench_writes_outputs(workdir, small_corpus, tmp_path, capsys):
    code, out, _ = run(["bench", "--model", workdir / "m.itnt", "--lm", workdir / "disp.lm",
                        "--test", small_corpus / "test.tsv", "--lengths", "10,20", "--trials", 3,
                        "--warmup", 1, "--nbest", 4, "--out-dir", tmp_path], capsys)
    assert code == 0
    assert "exponent engine" in out and "exponent baseline" in out
    rows = (tmp_path / "bench.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["length", "engine_seconds", "baseline_seconds"] and len(rows) == 3
    assert json.loads((tmp_path / "bench.json").read_text())["lengths"] == [10, 20]
    assert (tmp_path / "runtime.png").read_bytes()[:4] == b"\x89PNG"


def test_sweep_chunk_reinfer(workdir, small_corpus, tmp_path, capsys):
    code, out, _ = run(["sweep-chunk", "--model", workdir / "m.itnt", "--test", small_corpus / "test.tsv",
                        "--sizes", "1,2,4", "--out-dir", tmp_path], capsys)
    assert code == 0
    rows = json.loads((tmp_path / "sweep.json").read_text())
    assert [r["latency"] for r in rows] == [0.0, 0.5, 1.5]
    assert (tmp_path / "sweep.tsv").read_text().startswith("chunk\tlatency")
    assert (tmp_path / "sweep.png").read_bytes()[:4] == b"\x89PNG"


def test_sweep_chunk_needs_source(small_corpus):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep-chunk", "--test", str(small_corpus / "test.tsv")])
    assert exc.value.code == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "streamitn", "compile-rules", "--pack", GRAMMARS],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "16 categories compiled" in res.stdout
    res = subprocess.run([sys.executable, "-m", "streamitn", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 1
