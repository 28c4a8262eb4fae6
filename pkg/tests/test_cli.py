import json

import numpy as np
import pytest

from chromashape.classifier import generate_toy_dataset, load_model, save_model
from chromashape.cli import cli_main
from chromashape.image import save_png


@pytest.fixture(scope="module")
def model_file(tmp_path_factory, ref_model):
    p = tmp_path_factory.mktemp("m") / "ref.csh"
    save_model(ref_model, p)
    return p


def run(capsys, *argv):
    code = cli_main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_arguments_prints_usage(capsys):
    code, _, err = run(capsys)
    assert code == 2 and "usage" in err


def test_unknown_flag_is_usage_error(capsys):
    assert run(capsys, "report", "--nope")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


def test_help_exits_zero(capsys):
    assert run(capsys, "--help")[0] == 0


def test_report_on_bundled_table(capsys):
    code, out, _ = run(capsys, "report")
    assert code == 0
    assert "41.27%" in out and "5.88%" in out and "mean improvement 22.05%" in out


def test_train_writes_loadable_model(tmp_path, capsys):
    p = tmp_path / "m.csh"
    code, out, _ = run(capsys, "train", "--out", p, "--count", 30, "--size", 16, "--epochs", 1)
    assert code == 0 and json.loads(out)["model"] == str(p)
    assert load_model(p).input_shape == (3, 16, 16)


def test_train_into_missing_directory_is_io_error(tmp_path, capsys):
    assert run(capsys, "train", "--out", tmp_path / "no" / "m.csh", "--count", 6, "--epochs", 0)[0] == 5


def test_corrupt_model_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csh"
    bad.write_bytes(b"CSHMODEL\x01\x00garbage")
    assert run(capsys, "attack", "--model", bad, "--toy-index", 0)[0] == 3


def test_attack_and_enhance(tmp_path, capsys, model_file):
    img = generate_toy_dataset(1, 1).images[0]
    save_png(img, tmp_path / "clean.png")
    code, out, _ = run(capsys, "attack", "--model", model_file, "--toy-index", 0, "--attack", "fgsm", "--out", tmp_path / "adv.png")
    res = json.loads(out)
    assert code == 0 and res["success"] and res["shaped_l2"] <= res["baseline_l2"]
    assert (tmp_path / "adv.png").is_file()

    code, out, _ = run(
        capsys, "enhance", "--image", tmp_path / "clean.png", "--adversarial", tmp_path / "adv.png",
        "--alpha", 0.0, "--out", tmp_path / "enh.png", "--model", model_file,
    )
    info = json.loads(out)
    assert code == 0 and (tmp_path / "enh.png").is_file()
    assert info["shaped_l2"] <= info["raw_l2"] + 1e-6


def test_enhance_with_noise_file(tmp_path, capsys):
    img = generate_toy_dataset(1, 1).images[0]
    save_png(img, tmp_path / "clean.png")
    np.save(tmp_path / "n.npy", np.full((3, 32, 32), 0.02))
    code, _, _ = run(capsys, "enhance", "--image", tmp_path / "clean.png", "--noise", tmp_path / "n.npy", "--out", tmp_path / "o.png")
    assert code == 0
    np.save(tmp_path / "bad.npy", np.zeros((3, 4, 4)))
    code, _, _ = run(capsys, "enhance", "--image", tmp_path / "clean.png", "--noise", tmp_path / "bad.npy", "--out", tmp_path / "o.png")
    assert code == 2


def test_attack_png_requires_label(tmp_path, capsys, model_file):
    save_png(generate_toy_dataset(1, 1).images[0], tmp_path / "c.png")
    assert run(capsys, "attack", "--model", model_file, "--image", tmp_path / "c.png")[0] == 2


def test_missing_png_is_dataset_error(tmp_path, capsys, model_file):
    assert run(capsys, "attack", "--model", model_file, "--image", tmp_path / "none.png", "--label", 0)[0] == 4


def test_sweep_is_reproducible(tmp_path, capsys, model_file):
    outs = []
    d = tmp_path / "a"
    for _ in range(2):
        code, out, _ = run(capsys, "sweep", "--model", model_file, "--attacks", "fgsm", "--alphas", "1,0", "--count", 2, "--seed", 7, "--out-dir", d)
        assert code == 0 and "mean improvement" in out
        outs.append(((d / "report.csv").read_bytes(), (d / "report.json").read_bytes()))
    assert outs[0] == outs[1]
    code, out, _ = run(capsys, "report", tmp_path / "a" / "report.json")
    assert code == 0 and out.startswith("fgsm")
    code, out2, _ = run(capsys, "report", tmp_path / "a" / "report.csv")
    assert code == 0 and out2 == out


def test_sweep_config_file_with_flag_override(tmp_path, capsys, model_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"attacks": ["cw"], "alphas": [1.0], "toy_count": 1, "toy_seed": 3}))
    d = tmp_path / "out"
    code, _, _ = run(capsys, "sweep", "--config", cfg, "--model", model_file, "--attacks", "fgsm", "--out-dir", d, "--emit-images")
    assert code == 0
    doc = json.loads((d / "report.json").read_text())
    assert doc["config"]["attacks"] == ["fgsm"] and doc["config"]["toy_seed"] == 3
    assert {r["attack"] for r in doc["rows"]} == {"fgsm"}
    assert sorted(p.name.split("_")[2] for p in (d / "images").iterdir()) == ["baseline", "original", "shaped"]


def test_bad_config_file_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert run(capsys, "sweep", "--config", cfg)[0] == 2
