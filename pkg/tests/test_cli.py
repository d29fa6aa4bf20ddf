import json

import pytest

from tslm.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_TRANSPORT, EXIT_USAGE, load_config, main
from tslm.persistence import PipelineConfig, read_pairs

TINY = {
    "d": 16, "heads": 2, "prototypes": 8, "enc_layers": 1, "dec_layers": 1, "ae_channels": [8, 4, 4, 8],
    "lr": 0.002, "ae_epochs": 3, "denoiser_epochs": 2, "tslm_epochs": 2, "batch": 4, "max_len": 8,
    "sampling": {"k": 2, "max_len": 8}, "threshold": "auto",
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A tiny end-to-end run whose files the tests below reuse."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    PipelineConfig.from_dict(TINY).save(cfg)
    steps = [
        ["make-synth", "--out", d / "orig.jsonl", "--series", "12", "--seed", "1"],
        ["make-synth", "--out", d / "test.jsonl", "--series", "4", "--seed", "2"],
        ["gen-data", "--demos", d / "orig.jsonl", "--out", d / "gen.jsonl", "--count", "30", "--bootstrap", "--inject-noise", "0.1"],
        ["train-ae", "--data", d / "orig.jsonl", d / "gen.jsonl", "--out", d / "ae.ckpt"],
        ["train-denoiser", "--data", d / "orig.jsonl", "--ae", d / "ae.ckpt", "--out", d / "den.ckpt"],
        ["denoise", "--data", d / "gen.jsonl", "--model", d / "den.ckpt", "--out", d / "clean.jsonl", "--report", d / "den.json", "--removed", d / "removed.jsonl"],
        ["train", "--data", d / "orig.jsonl", d / "clean.jsonl", "--ae", d / "ae.ckpt", "--out", d / "tslm.ckpt"],
    ]
    for argv in steps:
        assert run(*argv, "--config", cfg) == EXIT_OK, argv
    return d, cfg


def run(*argv):
    return main(["-q"] + [str(a) for a in argv])


def test_pipeline_files(work):
    d, _ = work
    assert len(read_pairs(d / "gen.jsonl")) == 30
    assert json.loads((d / "gen.noise.json").read_text())["indices"] and (d / "ae.losses.json").exists()
    report = json.loads((d / "den.json").read_text())
    assert report["kept"] + report["removed"] == 30 and report["threshold"] == pytest.approx(report["suggested_interval"][0])
    assert (d / "den.png").stat().st_size > 0
    assert len(read_pairs(d / "clean.jsonl")) + len(read_pairs(d / "removed.jsonl")) == 30


def test_caption_and_summary(work, capsys):
    d, cfg = work
    code = run("caption", "--model", d / "tslm.ckpt", "--ae", d / "ae.ckpt", "--series", "10,12,14,30,50,70,72,74,75", "--config", cfg, "-k", "3")
    out = capsys.readouterr().out.strip().splitlines()
    assert code == EXIT_OK and len(out) == 4 and out[-1].startswith("summary: ")


def test_caption_rejects_foreign_autoencoder(work, tmp_path):
    d, cfg = work
    assert run("train-ae", "--data", d / "orig.jsonl", "--out", tmp_path / "other.ckpt", "--config", cfg, "--seed", "9") == EXIT_OK
    code = run("caption", "--model", d / "tslm.ckpt", "--ae", tmp_path / "other.ckpt", "--series", "10,20,30", "--config", cfg)
    assert code == EXIT_DATA


def test_evaluate_and_score(work, tmp_path):
    d, cfg = work
    rep = tmp_path / "eval.json"
    assert run("evaluate", "--model", d / "tslm.ckpt", "--denoiser", d / "den.ckpt", "--test", d / "test.jsonl", "--report", rep, "--config", cfg) == 0
    rows = json.loads(rep.read_text())["rows"]
    assert len(rows) == 1 and rows[0]["n_series"] == 4 and rows[0]["tslm_score"] is not None
    assert (tmp_path / "eval.csv").exists()
    assert run("score", "--denoiser", d / "den.ckpt", "--pairs", d / "test.jsonl", "--out", tmp_path / "s.jsonl") == 0
    assert all(p.score is not None for p in read_pairs(tmp_path / "s.jsonl"))


def test_seeded_rerun_is_identical(work, tmp_path):
    d, cfg = work
    for name in ("a", "b"):
        assert run("train-ae", "--data", d / "orig.jsonl", "--out", tmp_path / f"{name}.ckpt", "--config", cfg, "--seed", "4") == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_missing_checkpoint_is_usage_error(work, tmp_path, capsys):
    d, cfg = work
    code = run("train", "--data", d / "orig.jsonl", "--ae", tmp_path / "nope.ckpt", "--out", tmp_path / "x.ckpt", "--config", cfg)
    err = capsys.readouterr().err
    assert code == EXIT_USAGE and "usage:" in err and "nope.ckpt" in err


def test_missing_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train-ae", "--out", "x"])
    assert info.value.code == EXIT_USAGE


def test_malformed_jsonl_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"series": [1, 2, 3], "caption": "ok"}\n{"series": [1, 2\n')
    code = run("train-ae", "--data", bad, "--out", tmp_path / "ae.ckpt")
    assert code == EXIT_DATA and "line 2" in capsys.readouterr().err


def test_wrong_checkpoint_kind_is_data_error(work, tmp_path):
    d, cfg = work
    code = run("denoise", "--data", d / "gen.jsonl", "--model", d / "ae.ckpt", "--out", tmp_path / "o", "--report", tmp_path / "r.json")
    assert code == EXIT_DATA


def test_divergent_training_is_numeric_error(work, tmp_path):
    d, cfg = work
    code = run("train-ae", "--data", d / "orig.jsonl", "--out", tmp_path / "ae.ckpt", "--config", cfg, "--lr", "1e300")
    assert code == EXIT_NUMERIC


def test_unreachable_endpoint_is_transport_error(work, tmp_path):
    d, _ = work
    code = run(
        "gen-data", "--demos", d / "orig.jsonl", "--out", tmp_path / "g.jsonl", "--count", "3",
        "--backend", "remote", "--endpoint", "http://127.0.0.1:9/v1/chat/completions", "--model", "m",
    )
    assert code == EXIT_TRANSPORT


def test_fraction_sweep_needs_data(work, tmp_path):
    d, cfg = work
    code = run("evaluate", "--model", d / "tslm.ckpt", "--denoiser", d / "den.ckpt", "--test", d / "test.jsonl",
               "--report", tmp_path / "r.json", "--sweep", "fraction", "--config", cfg)
    assert code == EXIT_USAGE


def test_toy_config_bundled():
    cfg = load_config("toy")
    assert cfg.threshold == "auto" and cfg.d % cfg.heads == 0
