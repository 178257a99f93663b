import json
import subprocess
import sys

import pytest

from gatecnn.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_USAGE, run
from gatecnn.model import load_weights
from gatecnn.quant import load_quantized, parse_rom
from gatecnn.synth import load_frames


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {k: str(d / n) for k, n in [("data", "d.mdfr"), ("w", "w.gcnn"), ("q", "q.gcnq"),
                                        ("rom", "rom.h")]}
    assert run(["gen-data", "--spec", "three-class", "--out", paths["data"], "--seed", "2"]) == 0
    assert run(["train", "--data", paths["data"], "--out", paths["w"], "--epochs", "3"]) == 0
    assert run(["quantize", "--weights", paths["w"], "--out", paths["q"]]) == 0
    assert run(["export-rom", "--quantized", paths["q"], "--out", paths["rom"]]) == 0
    return paths


def test_pipeline_outputs(artifacts):
    frames = load_frames(artifacts["data"])
    assert len(frames) == 60
    cfg, _ = load_weights(artifacts["w"])
    assert cfg.num_classes == 3
    qm = load_quantized(artifacts["q"])
    assert qm.cfg == cfg
    with open(artifacts["rom"]) as fh:
        assert parse_rom(fh.read()).same_as(qm)
    with open(artifacts["q"] + ".audit.jsonl") as fh:
        lines = [json.loads(line) for line in fh]
    assert [r["stage"] for r in lines][-1] == "logits"


def test_train_logs_json_lines(artifacts, tmp_path, capsys):
    assert run(["train", "--data", artifacts["data"], "--out", str(tmp_path / "w"), "--epochs", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    recs = [json.loads(line) for line in out if line.startswith("{")]
    assert [r["epoch"] for r in recs] == [1, 2]
    assert set(recs[0]) == {"epoch", "loss", "accuracy"}


def test_infer_float_and_fixed(artifacts, capsys):
    assert run(["infer", "--weights", artifacts["w"], "--data", artifacts["data"]]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "agreement" not in out
    assert run(["infer", "--weights", artifacts["w"], "--data", artifacts["data"], "--fixed"]) == 0
    out = capsys.readouterr().out
    assert "fixed/float argmax agreement 1.0000 (60/60)" in out


def test_bench(capsys, artifacts):
    assert run(["bench"]) == 0
    out = capsys.readouterr().out
    assert "realtime_ok true" in out and "params 2719 flops 283584" in out
    assert run(["bench", "--weights", artifacts["w"], "--parallelism", "8"]) == 0
    assert "ratio" in capsys.readouterr().out


def test_selftest(capsys):
    assert run(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 9


def test_reruns_are_byte_identical(artifacts, tmp_path):
    data2, w2, q2 = (str(tmp_path / n) for n in ("d.mdfr", "w.gcnn", "q.gcnq"))
    assert run(["gen-data", "--spec", "three-class", "--out", data2, "--seed", "2"]) == 0
    assert run(["train", "--data", data2, "--out", w2, "--epochs", "3"]) == 0
    assert run(["quantize", "--weights", w2, "--out", q2]) == 0
    for a, b in [(artifacts["data"], data2), (artifacts["w"], w2), (artifacts["q"], q2),
                 (artifacts["q"] + ".audit.jsonl", q2 + ".audit.jsonl")]:
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read(), b


def test_usage_errors(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert run(["bogus"]) == EXIT_USAGE
    assert run(["train", "--data", "x"]) == EXIT_USAGE
    assert run(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "w")]) == EXIT_USAGE
    assert run(["gen-data", "--out", str(tmp_path / "no" / "dir" / "f")]) == EXIT_USAGE
    assert run(["bench", "--parallelism", "two"]) == EXIT_USAGE
    capsys.readouterr()


def test_data_errors(tmp_path, artifacts, capsys):
    junk = tmp_path / "junk"
    junk.write_bytes(b"not a model")
    assert run(["infer", "--weights", str(junk), "--data", artifacts["data"]]) == EXIT_DATA
    assert run(["infer", "--weights", artifacts["w"], "--data", str(junk)]) == EXIT_DATA
    assert run(["export-rom", "--quantized", artifacts["w"], "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert run(["bench", "--parallelism", "0"]) == EXIT_DATA
    assert "error" in capsys.readouterr().err


def test_export_rom_invariant_failure(artifacts, tmp_path, monkeypatch):
    from gatecnn import quant

    monkeypatch.setattr(quant, "export_rom", lambda qm: "// broken\n")
    monkeypatch.setattr(quant, "parse_rom", lambda text: type("Q", (), {"same_as": lambda s, o: False})())
    assert run(["export-rom", "--quantized", artifacts["q"], "--out", str(tmp_path / "r")]) == EXIT_INVARIANT
    assert not (tmp_path / "r").exists()


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.mdfr"
    proc = subprocess.run([sys.executable, "-m", "gatecnn.cli", "gen-data", "--spec", "three-class",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 60 frames" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "gatecnn.cli", "train"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
