import json
import subprocess
import sys
from pathlib import Path

import pytest

from ringpose.cli import main

ROOT = Path(__file__).resolve().parents[1]
SHORT = str(ROOT / "scenarios" / "asl-digits-short.json")


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(root: Path, skip: Path):
    return {p: p.stat().st_mtime_ns for p in root.rglob("*") if p.is_file() and skip not in p.parents}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--scenario", SHORT, "--seed", 7, "--out", out) == 0
    return out


def test_synth(tmp_path):
    assert run("synth", "--frames", 3, "--out", tmp_path) == 0
    assert (tmp_path / "tx.pcm").stat().st_size == 3 * 600 * 2
    assert (tmp_path / "tx.csv").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "synth" and man["config"]["frames"] == 3
    assert {"seeds", "inputs", "outputs", "threads", "version", "duration_s"} <= set(man)


def test_simulate_deterministic(sim_dir, tmp_path):
    assert run("simulate", "--scenario", SHORT, "--seed", 7, "--out", tmp_path) == 0
    for name in ("rx.pcm", "capture.bin", "ground_truth.jsonl"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()


def test_echoprofile_outputs(sim_dir, tmp_path):
    assert run("echoprofile", "--in", sim_dir / "rx.pcm", "--tx-default", "--out", tmp_path) == 0
    for name in ("original.csv", "differential.csv", "original.pgm", "differential.pgm", "manifest.json"):
        assert (tmp_path / name).exists(), name
    assert (tmp_path / "original.pgm").read_bytes().startswith(b"P")


def test_echoprofile_from_capture_matches(sim_dir, tmp_path):
    # the capture is the quantized recording, so it matches the PCM path exactly
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("echoprofile", "--in", sim_dir / "rx.pcm", "--tx-default", "--out", a) == 0
    assert run("echoprofile", "--in", sim_dir / "capture.bin", "--tx-default", "--out", b) == 0
    assert (a / "original.csv").read_text() == (b / "original.csv").read_text()


def test_manifest_reproduces(sim_dir, tmp_path):
    first, again = tmp_path / "first", tmp_path / "again"
    assert run("echoprofile", "--in", sim_dir / "rx.pcm", "--tx-default", "--t0", 3, "--out", first) == 0
    assert run("echoprofile", "--config", first / "manifest.json", "--out", again) == 0
    assert (first / "differential.csv").read_bytes() == (again / "differential.csv").read_bytes()
    assert json.loads((again / "manifest.json").read_text())["config"]["t0"] == 3


def test_dataset_eval_replay(sim_dir, tmp_path):
    ds = tmp_path / "ds"
    assert run("dataset-build", "--in", sim_dir / "rx.pcm", "--labels", sim_dir / "ground_truth.jsonl",
               "--stride", 4, "--out", ds) == 0
    ev = tmp_path / "ev"
    assert run("eval-pose", "--train", ds / "dataset.rapd", "--test", ds / "dataset.rapd", "--out", ev) == 0
    report = json.loads((ev / "report.json").read_text())
    assert report["mpjpe_mm"] == 0.0
    # scoring an exported prediction file gives the same report
    ev2 = tmp_path / "ev2"
    assert run("eval-pose", "--predictions", ev / "predictions.jsonl", "--test", ds / "dataset.rapd",
               "--out", ev2) == 0
    assert json.loads((ev2 / "report.json").read_text()) == report
    rp = tmp_path / "rp"
    assert run("replay", "--in", sim_dir / "capture.bin", "--model", ds / "dataset.rapd", "--stride", 4,
               "--overflow", "block", "--out", rp) == 0
    lat = json.loads((rp / "latency.json").read_text())
    assert lat["dropped_windows"] == 0 and lat["gaps"] == []
    assert len((rp / "predictions.jsonl").read_text().splitlines()) > 0


def test_augment_dataset(sim_dir, tmp_path):
    ds = tmp_path / "ds"
    assert run("dataset-build", "--in", sim_dir / "rx.pcm", "--labels", sim_dir / "ground_truth.jsonl",
               "--stride", 20, "--out", ds) == 0
    a1, a2 = tmp_path / "a1", tmp_path / "a2"
    for out in (a1, a2):
        assert run("augment", "--in", ds / "dataset.rapd", "--seed", 3, "--copies", 2, "--out", out) == 0
    assert (a1 / "augmented.rapd").read_bytes() == (a2 / "augmented.rapd").read_bytes()


def test_bench(tmp_path):
    assert run("bench", "--windows", 5, "--throughput-seconds", 0, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert rep["stages"]["correlate_ms"]["mean_ms"] > 0
    assert rep["window_shape"] == [2, 54, 100]


@pytest.mark.parametrize("argv", [
    ["echoprofile", "--in", "nope.pcm", "--tx-default"],
    ["echoprofile", "--in", SHORT],  # no template given
    ["simulate"],  # no scenario
    ["synth", "--threads", "0"],
])
def test_usage_errors(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "o") == 2


def test_config_schema_mismatch(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"frames": 2, "colour": "red"}))
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == 2
    bad.write_text(json.dumps({"frames": "two"}))
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == 2
    assert run("synth", "--out", tmp_path / "s") == 0
    assert run("bench", "--config", tmp_path / "s" / "manifest.json", "--out", tmp_path / "o") == 2


def test_domain_error_exit_1(tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"poses": ["NotAPose"]}))
    assert run("simulate", "--scenario", sc, "--out", tmp_path / "o") == 1
    sc.write_text(json.dumps({"kind": "dance"}))
    assert run("simulate", "--scenario", sc, "--out", tmp_path / "o") == 1
    sc.write_text(json.dumps({"poses": ["ASL1"], "hold_s": -1.0}))
    assert run("simulate", "--scenario", sc, "--out", tmp_path / "o") == 1


def test_scenario_schema_mismatch_exit_2(tmp_path):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"wobble": 1}))
    assert run("simulate", "--scenario", sc, "--out", tmp_path / "o") == 2
    sc.write_text(json.dumps({"hold_s": "long"}))
    assert run("simulate", "--scenario", sc, "--out", tmp_path / "o") == 2


def test_bad_flag_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("synth", "--frobnicate", "--out", tmp_path)
    assert exc.value.code == 2


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RAP_THREADS", "3")
    assert run("synth", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["threads"] == 3
    monkeypatch.setenv("RAP_THREADS", "x")
    assert run("synth", "--out", tmp_path) == 2


def test_writes_only_under_out(sim_dir, tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    (work / "rx.pcm").write_bytes((sim_dir / "rx.pcm").read_bytes())
    monkeypatch.chdir(work)
    out = work / "out"
    before = snapshot(tmp_path, out)
    assert run("echoprofile", "--in", "rx.pcm", "--tx-default", "--out", out) == 0
    assert run("synth", "--out", out / "s") == 0
    assert snapshot(tmp_path, out) == before


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ringpose", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "dataset-build" in r.stdout
