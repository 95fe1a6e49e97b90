import csv
import json

import pytest
import yaml

from polemb.cli import EXIT_CONFIG, EXIT_USAGE, main

TINY = {
    "seed": 0,
    "env": {"kind": "arena"},
    "population": {"n": 8},
    "graph": {"episodes_per_edge": 3},
    "split": {"train_fraction": 0.6, "counts": [4, 2, 2]},
    "embed": {"d": 4, "epochs": 1, "encoder_hidden": [8], "decoder_hidden": [8], "lambda_grid": [0.1]},
    "eval": {"classifier_epochs": 2, "pca_agents": 3, "pca_episodes": 2, "pca_components": 2},
    "rl": {"train_opponents": 2, "test_opponents": 2, "iterations": 2, "batch_episodes": 2, "hidden": [8],
           "eval_every": 1, "eval_games": 2},
}


def _config(tmp_path, name="run.yaml", **over):
    d = {**TINY, **over, "output_dir": str(tmp_path / "out")}
    p = tmp_path / name
    p.write_text(yaml.safe_dump(d))
    return str(p)


def _pipeline(cfg):
    steps = [
        ["gen-population"], ["collect"], ["split", "--mode", "weak"], ["split", "--mode", "strong"],
        ["train-embed", "--mode", "weak"], ["train-embed", "--mode", "strong"],
        ["eval-embed", "--mode", "weak"], ["eval-embed", "--mode", "strong"], ["train-rl"], ["report"],
    ]
    for s in steps:
        assert main([s[0], "--config", cfg, *s[1:]]) == 0, s


def test_usage_errors(tmp_path):
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["split", "--config", _config(tmp_path), "--bogus"]) == EXIT_USAGE


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\nunknown_section: {}\n")
    assert main(["gen-population", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["gen-population", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    cfg = _config(tmp_path)
    # later steps without their inputs are configuration errors
    assert main(["collect", "--config", cfg]) == EXIT_CONFIG
    assert main(["gen-population", "--config", cfg]) == 0
    assert main(["collect", "--config", cfg]) == 0
    assert main(["split", "--config", cfg, "--mode", "strong", "--counts", "1,1"]) == EXIT_CONFIG
    assert main(["split", "--config", cfg, "--mode", "strong", "--counts", "4,2,1"]) == EXIT_CONFIG


def test_strong_split_counts_on_25_clique(tmp_path):
    cfg = _config(tmp_path, population={"n": 25}, graph={"episodes_per_edge": 2})
    assert main(["gen-population", "--config", cfg]) == 0
    assert main(["collect", "--config", cfg]) == 0
    assert main(["split", "--config", cfg, "--mode", "strong", "--counts", "15,5,5"]) == 0
    manifest = json.loads((tmp_path / "out" / "split_strong.json").read_text())
    assert len(manifest["edges"]["train"]) == 105


def test_lambda_grid_models(tmp_path):
    cfg = _config(tmp_path, embed={**TINY["embed"], "variants": ["hyb"]})
    for s in (["gen-population"], ["collect"], ["split", "--mode", "weak"]):
        assert main([s[0], "--config", cfg, *s[1:]]) == 0
    assert main(["train-embed", "--config", cfg, "--mode", "weak", "--lambda-grid", "0.01,0.05,0.1,0.5"]) == 0
    base = tmp_path / "out" / "models" / "weak"
    assert sorted(p.name for p in base.iterdir() if p.is_dir()) == [
        "hyb_lam0.01", "hyb_lam0.05", "hyb_lam0.1", "hyb_lam0.5"]
    rows = list(csv.DictReader(open(base / "lambda_selection.csv")))
    assert len(rows) == 4 and sum(int(r["selected"]) for r in rows) == 1


def test_empty_report(tmp_path):
    cfg = _config(tmp_path)
    assert main(["report", "--config", cfg]) == 0
    m = json.loads((tmp_path / "out" / "report" / "manifest.json").read_text())
    assert m["files"] == {} and m["gaps"]


def test_full_pipeline_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    ca, cb = _config(a), _config(b)
    _pipeline(ca)
    _pipeline(cb)
    ra, rb = a / "out" / "report", b / "out" / "report"
    files = sorted(p.name for p in ra.glob("*.csv"))
    assert "table1_iicr.csv" in files and "fig7_head_to_head.csv" in files
    assert files == sorted(p.name for p in rb.glob("*.csv"))
    for f in files:
        assert (ra / f).read_bytes() == (rb / f).read_bytes(), f
    rows = list(csv.reader(open(ra / "table1_iicr.csv")))
    assert rows[0] == ["variant", "weak", "strong"]
    assert [r[0] for r in rows[1:]] == ["Emb-Im", "Emb-Id", "Emb-Hyb"]
    manifest = json.loads((ra / "manifest.json").read_text())
    assert manifest["gaps"] == []


def test_output_root_env(tmp_path, monkeypatch):
    p = tmp_path / "rel.yaml"
    p.write_text(yaml.safe_dump({**TINY, "output_dir": "relative_run"}))
    monkeypatch.setenv("POLEMB_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["gen-population", "--config", str(p)]) == 0
    assert (tmp_path / "root" / "relative_run" / "population.json").exists()


def test_signal_report_layout(tmp_path):
    cfg = _config(tmp_path, env={"kind": "signal"}, population={}, graph={"episodes_per_edge": 2},
                  split={"counts": [14, 7, 7]},
                  rl={"counts": [2, 1, 1], "seeds": 1, "episodes_per_listener": 2, "iterations": 2,
                      "batch_episodes": 2, "hidden": [8], "eval_every": 1, "eval_games": 2})
    for s in (["gen-population"], ["collect"], ["train-rl"], ["report"]):
        assert main([s[0], "--config", cfg, *s[1:]]) == 0, s
    rows = list(csv.reader(open(tmp_path / "out" / "report" / "table3_speaker_rewards.csv")))
    assert rows[0] == ["variant", "train_reward", "test_reward"]
    assert [r[0] for r in rows[1:]] == ["baseline", "+Emb-Im", "+Emb-Id", "+Emb-Hyb"]
