import json

import numpy as np
import pytest
from PIL import Image

from tokfold.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def json_lines(out):
    return [json.loads(line) for line in out.strip().splitlines() if line]


def test_crop_plan_paper_example(capsys):
    code, out, _ = run_cli(capsys, "crop-plan", "--width", "896", "--height", "672")
    assert code == 0
    (doc,) = json_lines(out)
    assert doc["rows"] == 3 and doc["cols"] == 4


def test_crop_plan_rejects_bad_input(capsys):
    code, out, err = run_cli(capsys, "crop-plan", "--width", "0", "--height", "5")
    assert code == 2
    assert "error" in err


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["crop-plan", "--width", "1", "--height", "1", "--bogus", "2"])
    assert exc.value.code == 1


def test_spe_emits_grid(capsys):
    code, out, _ = run_cli(capsys, "spe", "--rows", "2", "--cols", "3", "--dim", "8", "--heads", "2", "--seed", "1")
    assert code == 0
    lines = json_lines(out)
    assert len(lines) == 6
    assert all(len(l["embedding"]) == 8 for l in lines)
    assert lines[0]["row"] == 0 and lines[0]["col"] == 0


def test_spe_seed_env_override(capsys, monkeypatch):
    _, out_default, _ = run_cli(capsys, "spe", "--rows", "1", "--cols", "1", "--dim", "4", "--heads", "1")
    monkeypatch.setenv("TH2_SEED", "777")
    _, out_env, _ = run_cli(capsys, "spe", "--rows", "1", "--cols", "1", "--dim", "4", "--heads", "1")
    assert out_default != out_env


def test_coords_encode_decode_roundtrip(capsys):
    code, out, _ = run_cli(capsys, "coords", "encode", "--box", "0,0,1,1")
    assert code == 0
    (doc,) = json_lines(out)
    assert doc["length"] == 7 and len(doc["tokens"]) == 7

    code, out, _ = run_cli(capsys, "coords", "decode", "--tokens", ",".join(map(str, doc["tokens"])))
    assert code == 0
    (back,) = json_lines(out)
    assert back["box"] == [0.0, 0.0, 1.0, 1.0]


def test_coords_encode_digit_baseline(capsys):
    code, out, _ = run_cli(capsys, "coords", "encode", "--box", "0.2,0.3,0.4,0.5", "--digits")
    (doc,) = json_lines(out)
    assert doc["digit_length"] == 25


def test_coords_decode_malformed_is_data_error(capsys):
    code, _, err = run_cli(capsys, "coords", "decode", "--tokens", "0,3,3,3,3,3,1")
    assert code == 2 and "error" in err


def test_compress_counts_tokens(capsys, tmp_path):
    img = (np.random.default_rng(0).uniform(size=(224, 448, 3)) * 255).astype(np.uint8)
    path = tmp_path / "img.png"
    Image.fromarray(img).save(path)
    code, out, _ = run_cli(capsys, "compress", "--image", str(path), "--no-thumbnail", "--seed", "0")
    assert code == 0
    (doc,) = json_lines(out)
    assert doc["tokens"] == 32
    assert doc["grid"] == [1, 2]


def test_shard_build_stream_pack_resume(capsys, tmp_path):
    rng = np.random.default_rng(1)
    src = tmp_path / "samples.jsonl"
    with open(src, "w") as fh:
        for i in range(30):
            fh.write(json.dumps({"tokens": rng.integers(1, 50, size=20).tolist(), "tiles": 1}) + "\n")

    code, out, _ = run_cli(capsys, "shard", "build", "--input", str(src), "--out", str(tmp_path / "sh"),
                           "--chunk-size", "7", "--seed", "5")
    assert code == 0
    (built,) = json_lines(out)
    assert built["total"] == 30 and built["chunks"] == 5

    code, out, _ = run_cli(capsys, "shard", "stream", "--manifest", built["manifest"], "--workers", "2", "--worker", "0")
    assert code == 0
    w0 = json_lines(out)
    code, out, _ = run_cli(capsys, "shard", "stream", "--manifest", built["manifest"], "--workers", "2", "--worker", "1")
    w1 = json_lines(out)
    keys = sorted(d["key"] for d in w0 + w1)
    assert keys == sorted(f"{i:06d}" for i in range(30))

    # pack everything, then pack-with-interruption and resume
    code, out, _ = run_cli(capsys, "pack", "--manifest", built["manifest"], "--context", "256",
                           "--max-tiles", "8", "--seed", "3")
    assert code == 0
    full = json_lines(out)

    state = tmp_path / "state.json"
    code, out, _ = run_cli(capsys, "shard", "pack", "--manifest", built["manifest"], "--context", "256",
                           "--max-tiles", "8", "--seed", "3", "--limit", "2", "--state-out", str(state))
    assert code == 0
    head = json_lines(out)
    code, out, _ = run_cli(capsys, "shard", "resume", "--state", str(state))
    assert code == 0
    tail = json_lines(out)
    assert head + tail == full


def test_pp_plan_json(capsys):
    code, out, _ = run_cli(capsys, "pp-plan", "--layers", "1,1,1", "--vision", "1", "--stages", "2", "--micro", "4")
    assert code == 0
    (doc,) = json_lines(out)
    assert doc["boundaries"] == [1]
    assert doc["stage_costs"] == [2.0, 2.0]
    assert 0.0 <= doc["bubble"] < 1.0


def test_selftest_passes_clean_checkout(capsys):
    code, out, _ = run_cli(capsys, "selftest")
    assert code == 0
    lines = json_lines(out)
    assert lines and all(l["ok"] for l in lines)


def test_report_writes_figures(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "report", "--out", str(tmp_path / "rep"), "--seed", "0")
    assert code == 0
    lines = json_lines(out)
    assert len(lines) == 4
    for entry in lines:
        p = tmp_path / "rep" / f"{entry['figure']}.png"
        assert p.exists() and p.stat().st_size > 1000
    assert (tmp_path / "rep" / "report.jsonl").exists()


def test_stdout_is_json_lines_only(capsys, tmp_path):
    _, out, _ = run_cli(capsys, "crop-plan", "--width", "500", "--height", "500")
    for line in out.strip().splitlines():
        json.loads(line)
