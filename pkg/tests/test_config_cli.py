import json

import numpy as np
import pytest

from lcfm import cli
from lcfm.checkpoint import load_checkpoint
from lcfm.config import KEYS, RunConfig, help_text, parse_text
from lcfm.errors import BadConfig
from lcfm.model import predict

TINY = ["model.n_latents=4", "model.latent_dim=8", "model.z_dim=4", "model.self_attn_blocks=1",
        "model.heads=2", "enc.bands=4"]


def run(*argv, sets=()):
    args = list(argv)
    for s in list(TINY) + list(sets):
        args += ["--set", s]
    return cli.main(args)


def test_parse_text_and_errors():
    assert parse_text("a = 1  # note\n\n# skip\nb=x=y\n") == {"a": "1", "b": "x=y"}
    with pytest.raises(BadConfig):
        parse_text("no equals sign")
    with pytest.raises(BadConfig):
        RunConfig({"nope.key": "1"})
    with pytest.raises(BadConfig):
        RunConfig({"pretrain.lr": "fast"})


def test_echo_round_trips(tmp_path):
    cfg = RunConfig({"seed": "5", "finetune.ratios": "0.6,0.2,0.2", "model.z_dim": "8",
                     "enc.include_raw": "false", "sim.param.period": "16"})
    path = tmp_path / "c.txt"
    path.write_text(cfg.echo())
    back = RunConfig.load(path)
    assert back.values == cfg.values
    assert back.echo() == cfg.echo()


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("seed = 3\npretrain.lr = 0.01\n")
    cfg = RunConfig.load(path, ["seed=4"])
    assert cfg["seed"] == 4 and cfg["pretrain.lr"] == 0.01


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in KEYS:
        assert key in text
    assert help_text().count("\n") == len(KEYS)


def test_exit_codes(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["ingest", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["simulate", "--set", "bogus=1", "--out", str(tmp_path / "o")]) == 4
    assert cli.main(["simulate", "--set", "sim.family=WOBBLE", "--out", str(tmp_path)]) == 4
    assert cli.main(["pretrain", "--data", str(tmp_path / "missing.jsonl"),
                     "--out", str(tmp_path)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the run is meant to overflow
def test_numeric_failure_exit_code(tmp_path):
    assert run("simulate", "--out", str(tmp_path / "sim"), sets=["sim.n=6"]) == 0
    code = run("pretrain", "--data", str(tmp_path / "sim" / "curves.jsonl"),
               "--out", str(tmp_path / "pt"),
               sets=["pretrain.lr=1e300", "pretrain.clip=1e300", "pretrain.max_epochs=5",
                     "pretrain.batch=2"])
    assert code == 3
    assert not (tmp_path / "pt" / "model.ckpt").exists()


def test_ingest_fixture(tmp_path):
    track = tmp_path / "tracks.txt"
    track.write_text("# id: a\n0 7.1\n0.5 7.2\n1.0 7.0\n\n# id: b\n0 5\n1 6\n2 bad\n3 4\n\n"
                     "# id: c\n0 1\n2 2\n")
    out1, out2 = tmp_path / "i1", tmp_path / "i2"
    assert cli.main(["ingest", str(track), "--out", str(out1)]) == 0
    assert cli.main(["ingest", str(tmp_path), "--out", str(out2)]) == 0
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["curves"] == 3 and summary["skipped"] == 1
    assert (out1 / "curves.jsonl").read_bytes() == (out2 / "curves.jsonl").read_bytes()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--out", str(d / "sim"), sets=["sim.n=24", "sim.task=motion"]) == 0
    data = str(d / "sim" / "curves.jsonl")
    ep = ["pretrain.max_epochs=2", "pretrain.batch=8", "finetune.max_epochs=2",
          "finetune.batch=8"]
    assert run("pretrain", "--data", data, "--out", str(d / "pt"), sets=ep) == 0
    assert run("finetune", "--data", data, "--init", str(d / "pt" / "model.ckpt"),
               "--out", str(d / "ft"), sets=ep) == 0
    return d, data, ep


def test_pretrain_outputs_and_determinism(pipeline, tmp_path):
    d, data, ep = pipeline
    for name in ("model.ckpt", "history.csv", "metrics.json", "config.txt"):
        assert (d / "pt" / name).is_file()
    assert run("pretrain", "--data", data, "--out", str(tmp_path / "again"), sets=ep) == 0
    for name in ("model.ckpt", "history.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (d / "pt" / name).read_bytes()
    assert run("pretrain", "--data", data, "--out", str(tmp_path / "s2"), "--seed", "9",
               sets=ep) == 0
    a = (d / "pt" / "history.csv").read_text().splitlines()
    b = (tmp_path / "s2" / "history.csv").read_text().splitlines()
    assert a[0] == b[0] and a[1:] != b[1:]
    echo = RunConfig.load(d / "pt" / "config.txt")
    assert echo["model.z_dim"] == 4 and echo["pretrain.max_epochs"] == 2


def test_finetune_outputs(pipeline):
    d, _, _ = pipeline
    doc = json.loads((d / "ft" / "metrics.json").read_text())
    assert doc["classes"][0] == "INERTIAL" and len(doc["epochs"]) == 2
    text = (d / "ft" / "metrics.txt").read_text()
    for col in ("Precision", "Recall", "F1-Score", "ROC AUC"):
        assert col in text


def test_score_and_forecast(pipeline):
    d, data, _ = pipeline
    ck = str(d / "ft" / "model.ckpt")
    assert run("score", "--data", data, "--ckpt", ck, "--out", str(d / "sc")) == 0
    rows = (d / "sc" / "ranked.csv").read_text().splitlines()
    assert rows[0] == "rank,id,error,prob_anomaly,name,norad" and len(rows) == 25
    assert run("forecast", "--data", data, "--ckpt", ck, "--out", str(d / "fc")) == 0
    s = json.loads((d / "fc" / "summary.json").read_text())
    assert (s["tail_start"], s["tail_end"], s["n"]) == (96, 127, 24)


def test_generate_zero_noise_copies(pipeline):
    d, data, _ = pipeline
    ck = d / "ft" / "model.ckpt"
    params, _ = load_checkpoint(ck)
    from lcfm.dataio import read_jsonl
    curves = read_jsonl(data, params.classes)
    probs = predict(params, np.stack([c.values for c in curves]))["probs"]
    target = params.classes[int(np.bincount(probs.argmax(axis=1)).argmax())]
    code = run("generate", "--data", data, "--ckpt", str(ck), "--out", str(d / "gen"),
               sets=[f"gen.target={target}", "gen.threshold=0", "gen.noise_scale=0",
                     "gen.count=3", "gen.max_refs=1"])
    assert code == 0
    lines = (d / "gen" / "synthetic.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    assert len(recs) == 3 and recs[0]["values"] == recs[1]["values"] == recs[2]["values"]
    assert recs[0]["meta"]["generator"] == "genlab"
    assert run("generate", "--data", data, "--ckpt", str(ck), "--out", str(d / "gen2"),
               sets=[f"gen.target={target}", "gen.threshold=1"]) == 2


def test_report(pipeline):
    d, _, _ = pipeline
    assert cli.main(["report", str(d / "pt" / "history.csv"), "--out", str(d / "r1")]) == 0
    for name in ("losses.svg", "kl.svg", "lr.svg", "report.txt"):
        assert (d / "r1" / name).is_file()
    assert (d / "r1" / "losses.svg").read_text().startswith("<svg")
    assert cli.main(["report", str(d / "ft" / "metrics.json"), "--out", str(d / "r2")]) == 0
    assert "F1-Score" in (d / "r2" / "report.txt").read_text()
    assert cli.main(["report", str(d / "ft" / "history.csv"), "--out", str(d / "r3")]) == 0
    assert (d / "r3" / "accuracy.svg").is_file()
