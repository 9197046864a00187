from pathlib import Path

import numpy as np
import pytest

from astenet import checkpoint as ck
from astenet.cli import RunConfig, main, read_config_file, resolve
from astenet.corpus import (MAX_LEN, Sentence, build_vocab, format_line, load_embeddings, make_batch,
                            parse_dataset, prepare)
from astenet.decode import decode_triplets
from astenet.train import model_from_checkpoint

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = str(FIXTURES / "toy_corpus.txt")
EMB = str(FIXTURES / "toy_embeddings.txt")
SMALL = ["--d_w", "50", "--d_h", "4", "--heads", "2", "--layers", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def key_values(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and "####" not in line)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "model.ckpt"
    code = main(["train", "--train", CORPUS, "--dev", CORPUS, "--embeddings", EMB, "--out", str(out),
                 "--max_steps", "12", "--eval_interval", "6", *SMALL])
    assert code == 0
    return out


# ---------------------------------------------------------------- config

def test_precedence_cli_over_file_over_defaults(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nd_h = 16\nlr=0.01\nuse_tga=false\n")
    cfg, explicit = resolve(read_config_file(cfg_file), {"d_h": "32"})
    assert cfg.d_h == 32 and cfg.lr == 0.01 and cfg.use_tga is False
    assert cfg.heads == RunConfig().heads == 8
    assert explicit == {"d_h", "lr", "use_tga"}


def test_unknown_and_malformed_keys_are_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("d_h=8\nwidth=3\n")
    code, _, err = run(capsys, "eval", "--config", bad)
    assert code == 2 and "width" in err and "bad.cfg:2" in err
    code, _, err = run(capsys, "eval", "--no_such_flag", "1")
    assert code == 2
    code, _, err = run(capsys, "eval", "--d_h", "wide")
    assert code == 2 and "d_h" in err
    code, _, err = run(capsys, "frobnicate")
    assert code == 2


def test_missing_embeddings_names_the_key(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--train", CORPUS, "--dev", CORPUS, "--out", tmp_path / "m.ckpt")
    assert code == 2 and "embeddings" in err


def test_config_is_echoed_before_work(capsys):
    code, out, err = run(capsys, "eval", "--data", CORPUS, "--oracle_logits", "true")
    assert code == 0
    echoed = [line for line in err.splitlines() if line.startswith("config.")]
    assert len(echoed) == len(RunConfig.__dataclass_fields__)
    assert "config.d_h=200" in echoed and "config.oracle_logits=True" in echoed
    assert not any(line.startswith("config.") for line in out.splitlines())


# ----------------------------------------------------------------- train

def test_train_writes_checkpoint_and_log(trained):
    assert trained.exists() and (trained.parent / "model.ckpt.last").exists()
    log_lines = (trained.parent / "model.ckpt.log").read_text().splitlines()
    assert log_lines[0].startswith("event=eval step=0")
    assert sum(line.startswith("event=train") for line in log_lines) == 12
    assert ck.load(trained).config.d_h == 4


def test_train_is_deterministic(tmp_path, capsys, trained):
    code, out, _ = run(capsys, "train", "--train", CORPUS, "--dev", CORPUS, "--embeddings", EMB,
                       "--out", tmp_path / "again.ckpt", "--max_steps", "12", "--eval_interval", "6", *SMALL)
    assert code == 0
    assert (tmp_path / "again.ckpt").read_bytes() == trained.read_bytes()
    assert "dev.f1" in key_values(out)


def test_train_reports_data_errors_with_location(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("just words without separator\n")
    code, _, err = run(capsys, "train", "--train", bad, "--dev", CORPUS, "--embeddings", EMB,
                       "--out", tmp_path / "m.ckpt", *SMALL)
    assert code == 1 and "bad.txt:1" in err


# ------------------------------------------------------------------ eval

def test_eval_oracle_hook_scores_one(capsys):
    code, out, _ = run(capsys, "eval", "--data", CORPUS, "--oracle_logits", "true")
    kv = key_values(out)
    assert code == 0 and kv["f1"] == "1.000000" and kv["sentences"] == "10"
    assert kv["multi_triplet_ratio"] == "0.600000"


def test_eval_untrained_is_near_zero_and_repeatable(tmp_path, capsys, trained):
    args = ["eval", "--data", CORPUS, "--checkpoint", trained, "--embeddings", EMB,
            "--report", tmp_path / "report.txt", "--figures_dir", tmp_path / "figs"]
    code, first, _ = run(capsys, *args)
    assert code == 0
    assert float(key_values(first)["f1"]) < 0.05
    code, second, _ = run(capsys, *args)
    assert first == second
    assert (tmp_path / "figs" / "bucket_f1.png").read_bytes()[:4] == b"\x89PNG"
    assert "f1=" in (tmp_path / "report.txt").read_text()


def test_eval_rejects_conflicting_model_keys(capsys, trained):
    code, _, err = run(capsys, "eval", "--data", CORPUS, "--checkpoint", trained, "--embeddings", EMB,
                       "--d_h", "8")
    assert code == 1 and "d_h" in err and "checkpoint" in err
    code, _, _ = run(capsys, "eval", "--data", CORPUS, "--checkpoint", trained, "--embeddings", EMB,
                     "--d_h", "4")
    assert code == 0


# --------------------------------------------------------------- predict

def test_predict_output_reparses_and_is_deterministic(tmp_path, capsys, trained):
    src = tmp_path / "raw.txt"
    src.write_text("the sofa is nice\ngreat food but the service was dreadful\n")
    outputs = []
    for k in range(2):
        dest = tmp_path / f"pred{k}.txt"
        code, _, _ = run(capsys, "predict", "--input", src, "--output", dest, "--checkpoint", trained,
                         "--embeddings", EMB)
        assert code == 0
        outputs.append(dest.read_text())
    assert outputs[0] == outputs[1]
    parsed = parse_dataset(tmp_path / "pred0.txt")
    assert [s.tokens for s in parsed] == [l.split() for l in src.read_text().splitlines()]


def test_predict_empty_input_gives_empty_output(tmp_path, capsys, trained):
    (tmp_path / "empty.txt").write_text("")
    code, _, _ = run(capsys, "predict", "--input", tmp_path / "empty.txt", "--output", tmp_path / "o.txt",
                     "--checkpoint", trained, "--embeddings", EMB)
    assert code == 0 and (tmp_path / "o.txt").read_text() == ""


def test_predict_reports_long_lines_and_keeps_going(tmp_path, capsys, trained):
    src = tmp_path / "raw.txt"
    src.write_text("short one\n" + " ".join(["w"] * (MAX_LEN + 1)) + "\nanother short\n")
    code, _, err = run(capsys, "predict", "--input", src, "--output", tmp_path / "o.txt",
                       "--checkpoint", trained, "--embeddings", EMB)
    assert code == 1 and "raw.txt:2" in err
    assert [l.split("####")[0] for l in (tmp_path / "o.txt").read_text().splitlines()] == [
        "short one", "another short"]


# --------------------------------------------------------------- inspect

def test_inspect_prints_grid_and_matching_triplets(tmp_path, capsys, trained):
    sentence = "the sofa is nice but expensive"
    code, out, _ = run(capsys, "inspect", "--sentence", sentence, "--checkpoint", trained,
                       "--embeddings", EMB, "--figures_dir", tmp_path)
    assert code == 0
    lines = out.splitlines()
    grid = lines[lines.index("grid") + 2: lines.index("triplets")]
    assert len(grid) == 6
    assert all(cell in {"N/A", "POS", "NEG", "NEU"} for row in grid for cell in row.split()[1:])
    # the printed triplets are exactly what decoding the same logits yields
    ckpt = ck.load(trained)
    s = prepare(Sentence(sentence.split(), []))
    vocab = build_vocab([s])
    model = model_from_checkpoint(ckpt, load_embeddings(EMB, vocab, 50))
    seq, table = model.forward(make_batch([s], vocab))
    expected = decode_triplets(seq.data[0], table.data[0])
    assert lines[-1] == format_line(s.tokens, expected.triplets).split("####")[1]
    tags = [l.split()[1] for l in lines[1:lines.index("grid")]]
    assert tags == expected.tags
    assert (tmp_path / "label_grid.png").exists()


def test_inspect_single_token(capsys, trained):
    code, out, _ = run(capsys, "inspect", "--sentence", "nice", "--checkpoint", trained, "--embeddings", EMB)
    lines = out.splitlines()
    grid = lines[lines.index("grid") + 2: lines.index("triplets")]
    assert code == 0 and len(grid) == 1 and len(grid[0].split()) == 2
    assert np.isin(grid[0].split()[1], ["N/A", "POS", "NEG", "NEU"])
