import csv

import numpy as np
import pytest

from mtlm.acoustic_sim import read_nbest
from mtlm.cli import build_parser, main
from mtlm.decoding import score_unidirectional
from mtlm.model import load_checkpoint
from mtlm.tokenizer import Vocab

SMALL = ["--layers", "1", "--d-model", "16", "--d-ff", "32", "--max-len", "40"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["corpus", "--out", str(d / "corpus.txt"), "--sentences", "60", "--max-words", "5", "--seed", "2"]) == 0
    assert main(["corpus", "--out", str(d / "refs.txt"), "--sentences", "6", "--max-words", "5", "--seed", "9"]) == 0
    assert main(["train", "--corpus", str(d / "corpus.txt"), "--out-dir", str(d / "mt"), "--steps", "20",
                 "--log-interval", "5", "--seed", "7", *SMALL]) == 0
    assert main(["train", "--corpus", str(d / "corpus.txt"), "--out-dir", str(d / "uni"), "--steps", "20",
                 "--vocab", str(d / "mt" / "vocab.txt"), "--task-weights", "1,0,0", "--seed", "7", *SMALL]) == 0
    return d


def lm_args(d, name="mt"):
    return ["--checkpoint", str(d / name / "model.ckpt"), "--vocab", str(d / "mt" / "vocab.txt")]


def test_train_outputs(run):
    mt = run / "mt"
    assert {p.name for p in mt.iterdir()} >= {"model.ckpt", "vocab.txt", "loss.tsv", "loss.png"}
    assert len((mt / "loss.tsv").read_text().splitlines()) == 20 // 5
    ck = load_checkpoint(mt / "model.ckpt")
    assert ck.step == 20 and ck.meta["task_weights"] == [1.0, 1.0, 1.0]
    assert load_checkpoint(run / "uni" / "model.ckpt").meta["task_weights"] == [1.0, 0.0, 0.0]
    assert ck.vocab_hash == Vocab.load(mt / "vocab.txt", "char").fingerprint()


def test_help_lists_defaults(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
        assert "offsets" in text
    decode_help = sub.choices["decode"].format_help()
    assert "--beam BEAM" in decode_help and "(default: 3)" in decode_help
    assert "{s2s,mtlm+s2s}" in decode_help
    rescore = sub.choices["rescore"]
    assert rescore.get_default("mode") == "uni" and rescore.get_default("lambda_rescore") == 0.5
    assert sub.choices["train"].get_default("mask_rate") == 0.3
    assert sub.choices["train"].get_default("task_weights") == (1.0, 1.0, 1.0)
    with pytest.raises(SystemExit) as exc:
        main(["decode", "--help"])
    assert exc.value.code == 0


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["decode", "--beam", "three"])
    assert exc.value.code == 2


def test_lambda_zero_equals_am_only(run):
    common = ["decode", "--refs", str(run / "refs.txt"), "--eta", "0.3", "--beam", "3"]
    assert main([*common, *lm_args(run), "--lambda", "0", "--out", str(run / "h0.txt")]) == 0
    assert main([*common, "--vocab", str(run / "mt" / "vocab.txt"), "--lambda", "0",
                 "--out", str(run / "ham.txt")]) == 0
    assert (run / "h0.txt").read_bytes() == (run / "ham.txt").read_bytes()
    assert len((run / "h0.txt").read_text().splitlines()) == 6


def test_decode_scores_and_trace(run):
    out = run / "dec"
    out.mkdir()
    base = ["decode", "--refs", str(run / "refs.txt"), *lm_args(run), "--lambda", "1.0"]
    assert main([*base, "--out", str(out / "a.txt"), "--scores", str(out / "a.tsv"), "--trace",
                 str(out / "a.trace"), "--guide-score", "s2s"]) == 0
    assert main([*base, "--out", str(out / "b.txt"), "--trace", str(out / "b.trace"),
                 "--guide-score", "mtlm+s2s"]) == 0
    rows = (out / "a.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["utt", "am_score", "lm_score", "combined", "tokens"]
    am, lm, comb = (float(x) for x in rows[1].split("\t")[1:4])
    assert comb == pytest.approx(am + lm, abs=1e-9)
    assert (out / "a.trace").read_text() != (out / "b.trace").read_text()


def test_vocab_mismatch_is_configuration_error(run, capsys):
    other = run / "other_vocab.txt"
    other.write_text("<sos>\n<eos>\n<mask>\n<pad>\n<blank>\nz\n")
    code = main(["decode", "--refs", str(run / "refs.txt"), "--checkpoint", str(run / "mt" / "model.ckpt"),
                 "--vocab", str(other), "--out", str(run / "x.txt")])
    assert code == 3
    assert "does not match" in capsys.readouterr().err


def test_rescore_modes(run):
    v = Vocab.load(run / "mt" / "vocab.txt", "char")
    nb = run / "nb.txt"
    assert main(["nbest", "--refs", str(run / "refs.txt"), "--vocab", str(run / "mt" / "vocab.txt"),
                 "--n", "4", "--beam", "4", "--out", str(nb)]) == 0
    original = read_nbest(nb, v)
    assert main(["rescore", "--nbest", str(nb), *lm_args(run), "--lambda-rescore", "0", "--out",
                 str(run / "r0.txt")]) == 0
    r0 = read_nbest(run / "r0.txt", v)
    assert [[e.ids for e in a.entries] for a in r0] == [[e.ids for e in a.entries] for a in original]
    assert main(["rescore", "--nbest", str(nb), *lm_args(run), "--mode", "uni", "--out", str(run / "ru.txt")]) == 0
    params = load_checkpoint(run / "mt" / "model.ckpt").params
    for lst in read_nbest(run / "ru.txt", v):
        for e in lst.entries:
            assert e.lm_score == pytest.approx(score_unidirectional(params, e.ids), abs=1e-12)
    assert main(["rescore", "--nbest", str(nb), *lm_args(run), "--mode", "bi", "--out", str(run / "rb.txt")]) == 0
    for lst in read_nbest(run / "rb.txt", v):
        for e in lst.entries:
            assert len(e.terms) == len(e.ids) - 1


def test_rescore_parse_error_line(run, capsys):
    bad = run / "bad_nbest.txt"
    bad.write_text("UTT a\n-1.0\tq\n\n")
    code = main(["rescore", "--nbest", str(bad), *lm_args(run), "--out", str(run / "never.txt")])
    assert code == 3
    assert "line 2" in capsys.readouterr().err


def test_eval_outputs(run, capsys):
    refs = run / "refs.txt"
    assert main(["eval", "--ref", str(refs), "--hyp", f"same={refs}", "--out", str(run / "rep")]) == 0
    tsv = (run / "rep.tsv").read_text().splitlines()
    assert all(line.split("\t")[5] == "0" for line in tsv)
    assert (run / "rep.png").read_bytes()[:4] == b"\x89PNG"
    (run / "short.txt").write_text("one line\n")
    assert main(["eval", "--ref", str(refs), "--hyp", str(run / "short.txt"), "--out", str(run / "x")]) == 3


def test_sweep_cell_equals_decode_plus_eval(run):
    assert main(["sweep", "--refs", str(run / "refs.txt"), "--vocab", str(run / "mt" / "vocab.txt"),
                 "--mtlm", str(run / "mt" / "model.ckpt"), "--unilm", str(run / "uni" / "model.ckpt"),
                 "--beams", "1,2", "--systems", "am,mtlm-fusion,unilm-rescore-uni", "--out",
                 str(run / "sw.csv")]) == 0
    rows = list(csv.DictReader((run / "sw.csv").open()))
    assert len(rows) == 2 * 3
    assert (run / "sw.png").exists()
    assert main(["decode", "--refs", str(run / "refs.txt"), *lm_args(run), "--beam", "2", "--lambda", "0.5",
                 "--out", str(run / "d2.txt")]) == 0
    assert main(["eval", "--ref", str(run / "refs.txt"), "--hyp", f"x={run / 'd2.txt'}", "--out",
                 str(run / "d2")]) == 0
    wer = float((run / "d2.tsv").read_text().splitlines()[-1].split("\t")[-1])
    cell = next(r for r in rows if r["beam"] == "2" and r["system"] == "mtlm-fusion")
    assert float(cell["wer"]) == pytest.approx(wer, abs=0.01)


def test_sweep_rejects_missing_checkpoint(run):
    code = main(["sweep", "--refs", str(run / "refs.txt"), "--vocab", str(run / "mt" / "vocab.txt"),
                 "--systems", "mtlm-fusion", "--out", str(run / "no.csv")])
    assert code == 3


def test_config_file_and_flag_override(run):
    cfg = run / "decode.cfg"
    cfg.write_text(f"# decode settings\nrefs = {run / 'refs.txt'}\nvocab = {run / 'mt' / 'vocab.txt'}\n"
                   f"checkpoint = {run / 'mt' / 'model.ckpt'}\nbeam = 1\nlambda = 0.5\n")
    assert main(["decode", "--config", str(cfg), "--out", str(run / "c1.txt")]) == 0
    assert main(["decode", "--config", str(cfg), "--beam", "2", "--out", str(run / "c2.txt")]) == 0
    assert main(["decode", "--refs", str(run / "refs.txt"), *lm_args(run), "--beam", "2", "--lambda", "0.5",
                 "--out", str(run / "c3.txt")]) == 0
    assert (run / "c2.txt").read_bytes() == (run / "c3.txt").read_bytes()
    (run / "bad.cfg").write_text("no_such_key = 1\n")
    assert main(["decode", "--config", str(run / "bad.cfg"), "--out", str(run / "c4.txt")]) == 3


def test_log_env(run, monkeypatch, capsys):
    monkeypatch.setenv("MTLM_LOG", "info")
    assert main(["vocab", "--corpus", str(run / "corpus.txt"), "--out", str(run / "v2.txt")]) == 0
    assert (run / "v2.txt").read_bytes() == (run / "mt" / "vocab.txt").read_bytes()


def test_train_two_hundred_steps_log_cap(tmp_path):
    (tmp_path / "toy.txt").write_text("abc ab\nba cab\n")
    assert main(["train", "--corpus", str(tmp_path / "toy.txt"), "--mode", "char", "--steps", "200",
                 "--seed", "7", "--log-interval", "1", "--out-dir", str(tmp_path / "run"),
                 "--layers", "1", "--d-model", "8", "--d-ff", "8", "--max-len", "12"]) == 0
    lines = (tmp_path / "run" / "loss.tsv").read_text().splitlines()
    assert len(lines) == 200
    vals = np.array([[float(x) for x in line.split("\t")] for line in lines])
    assert vals[-1, 2] < vals[0, 2]
