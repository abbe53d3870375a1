import os
import subprocess
import sys

import pytest

from moce.cli import read_config_file, run
from moce.synthetic import SyntheticLangSpec, make_multiparallel, make_synthetic_corpus, write_multiparallel, write_tsv


def test_missing_subcommand_is_usage_error(capsys):
    assert run([]) == 1


def test_unknown_flag_is_usage_error():
    assert run(["params", "--nope", "1"]) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("d_model = 32\nwarp_speed = 9\n")
    assert run(["params", "--config", str(cfg)]) == 1


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "x.cfg"
    cfg.write_text("# toy\nd_model = 32\nheads = 4\nmax_delta = 3\nuse_lid = true\n")
    values = read_config_file(cfg)
    assert values == {"d_model": 32, "heads": 4, "max_delta": 3, "use_lid": True}
    assert run(["params", "--config", str(cfg), "--max-delta", "2", "--expert-bias", "false"]) == 0
    out = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    # pool 2^2 * 8^2 = 256, router (8 + 32) * 3 = 120
    assert out["ada_overhead"] == out["ada_overhead_formula"] == "376"


def test_invalid_config_value_is_usage_error(tmp_path):
    assert run(["params", "--d-model", "10", "--heads", "3"]) == 1
    assert run(["params", "--d-model", "ten"]) == 1


def test_tokenize_roundtrip(monkeypatch, capsys):
    import io
    monkeypatch.setattr(sys, "stdin", io.StringIO("hé\n"))
    assert run(["tokenize", "--lang", "fr", "--languages", "en,fr"]) == 0
    ids = capsys.readouterr().out.strip()
    assert ids == "259 104 195 169 257"
    monkeypatch.setattr(sys, "stdin", io.StringIO(ids + "\n"))
    assert run(["tokenize", "--lang", "fr", "--decode"]) == 0
    assert capsys.readouterr().out == "hé\n"


def test_conciseness(tmp_path, capsys):
    texts = make_multiparallel([SyntheticLangSpec("en"), SyntheticLangSpec("zh", bytes_per_symbol=3)], 20)
    write_multiparallel(texts, tmp_path / "m.tsv")
    assert run(["conciseness", "--input", str(tmp_path / "m.tsv"), "--pivot", "en",
                "--out", str(tmp_path / "r.csv")]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "lang,avg_bytes,ratio_vs_pivot"
    assert float(lines[2].split(",")[2]) == pytest.approx(3.0)


def test_missing_file_is_runtime_error(tmp_path):
    assert run(["conciseness", "--input", str(tmp_path / "nope.tsv"), "--pivot", "en"]) == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    specs = [SyntheticLangSpec("en", 8, 1), SyntheticLangSpec("xx", 8, 3, seed=1)]
    write_tsv(make_synthetic_corpus(specs, n_per_pair=20, length_range=(2, 4)), d / "train.tsv")
    code = run(["train", "--corpus", str(d / "train.tsv"), "--valid", str(d / "train.tsv"),
                "--out", str(d / "out"), "--d-model", "16", "--heads", "2", "--ffn", "32",
                "--max-delta", "3", "--use-lid", "true", "--max-steps", "6", "--valid-interval", "2",
                "--checkpoint-interval", "2", "--batch-tokens", "300", "--seed", "1"])
    assert code == 0
    return d


def test_train_outputs(trained):
    out = trained / "out"
    assert len((out / "loss.log").read_text().splitlines()) == 3
    assert (out / "final.moce").exists() and (out / "average.moce").exists()


def test_translate_beam_one_equals_greedy(trained, tmp_path):
    (tmp_path / "src.txt").write_text("abc\nba\n", encoding="utf-8")
    common = ["translate", "--checkpoint", str(trained / "out" / "final.moce"), "--input",
              str(tmp_path / "src.txt"), "--src-lang", "en", "--tgt-lang", "xx", "--max-len", "12"]
    assert run(common + ["--beam", "1", "--out", str(tmp_path / "b.txt")]) == 0
    assert run(common + ["--greedy", "--out", str(tmp_path / "g.txt")]) == 0
    assert (tmp_path / "b.txt").read_bytes() == (tmp_path / "g.txt").read_bytes()
    assert run(common + ["--override-lid", "none", "--out", str(tmp_path / "n.txt")]) == 0
    assert run(common + ["--override-lid", "qq"]) == 2


def test_route_stats(trained, tmp_path, capsys):
    assert run(["route-stats", "--checkpoint", str(trained / "out" / "final.moce"), "--corpus",
                str(trained / "train.tsv"), "--direction", "xx-en", "--out", str(tmp_path / "s.csv")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("avg_delta\t")
    assert (tmp_path / "s.csv").read_text().startswith("scope,stream,head,delta,count,ratio,weight_mass")
    assert run(["route-stats", "--checkpoint", str(trained / "out" / "final.moce"), "--corpus",
                str(trained / "train.tsv"), "--direction", "xx"]) == 1


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--seed", "7"]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert last.startswith("max relative error") and float(last.split()[-1]) < 1e-4


def test_console_entry_point():
    env = {**os.environ, "MOCE_THREADS": "1"}
    proc = subprocess.run([sys.executable, "-m", "moce.cli", "params"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert proc.stdout.startswith("total\t")
    proc = subprocess.run([sys.executable, "-m", "moce.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1
