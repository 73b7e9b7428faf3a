import csv

import pytest

from splatavatar.asset import load_asset
from splatavatar.cli import build_parser, main
from splatavatar.config import to_flat, write_kv
from splatavatar.data import write_camera_csv, write_expression_csv
from splatavatar.rig import ExpressionParams

from conftest import tiny_model_config


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Dataset, a 2-step training run and an asset, all made through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["datagen", "--out", str(data), "--ids", "1", "--expressions", "2", "--views", "2",
                 "--image-size", "64", "--uv-res", "32", "--seed", "5"]) == 0
    mcfg = root / "model.cfg"
    write_kv(mcfg, to_flat(tiny_model_config()))
    out = root / "run"
    assert main(["train", "--data", str(data), "--out", str(out), "--steps", "2", "--lr", "1e-3",
                 "--supervision-views", "1", "--model-config", str(mcfg), "--checkpoint-every", "1"]) == 0
    weights = out / "ckpt_000002.ckpt"
    asset = root / "a.asset"
    img = data / "images" / "id000_f000_v000.png"
    assert main(["reconstruct", "--weights", str(weights), "--images", str(img), "--out", str(asset)]) == 0
    return root, data, out, weights, asset


def test_datagen_and_train_outputs(run):
    root, data, out, weights, asset = run
    assert (data / "manifest.txt").is_file()
    assert sorted(p.name for p in out.glob("*.ckpt")) == [f"ckpt_00000{i}.ckpt" for i in range(3)]
    with open(out / "loss.csv", newline="") as fh:
        assert len(list(csv.reader(fh))) == 3


def test_reconstruct_logs_timing(run, capsys):
    root, data, out, weights, _ = run
    imgs = ",".join(str(data / "images" / f"id000_f000_v00{v}.png") for v in (0, 1))
    assert main(["reconstruct", "--weights", str(weights), "--images", imgs, "--out", str(root / "b.asset")]) == 0
    log = capsys.readouterr().out
    assert "event=reconstruct" in log and "n_images=2" in log and "seconds=" in log
    assert len(load_asset(root / "b.asset").input_hashes) == 2


def test_reconstruct_rejects_five_images(run, capsys):
    root, data, _, weights, _ = run
    imgs = [str(data / "images" / "id000_f000_v000.png")] * 5
    assert main(["reconstruct", "--weights", str(weights), "--images", ",".join(imgs), "--out",
                 str(root / "c.asset")]) == 2
    assert "event=error" in capsys.readouterr().out


def test_refine_animate_benchmark(run, capsys):
    root, data, _, _, asset = run
    from splatavatar.data import load_manifest

    m = load_manifest(data)
    write_camera_csv(root / "cam1.csv", m.cameras[:1])
    assert main(["refine", "--asset", str(asset), "--images", str(data / "images" / "id000_f000_v000.png"),
                 "--cameras", str(root / "cam1.csv"), "--iters", "2", "--lr", "1e-3",
                 "--out", str(root / "r.asset")]) == 0
    assert "event=refine_done" in capsys.readouterr().out
    e = ExpressionParams.neutral(m.rig.n_expr)
    e2 = ExpressionParams.neutral(m.rig.n_expr)
    e2.psi[0] = 1.0
    write_expression_csv(root / "seq.csv", [e, e2, e])
    assert main(["animate", "--asset", str(root / "r.asset"), "--expressions", str(root / "seq.csv"),
                 "--cameras", str(root / "cam1.csv"), "--out", str(root / "anim")]) == 0
    assert len(list((root / "anim").glob("frame_*.png"))) == 3
    assert (root / "anim" / "timing.csv").is_file()
    capsys.readouterr()
    assert main(["benchmark", "--asset", str(asset), "--frames", "1", "--csv", str(root / "bench.csv")]) == 0
    log = capsys.readouterr().out
    assert "stage=composite" in log and "note=context_only" in log
    with open(root / "bench.csv", newline="") as fh:
        assert len(list(csv.reader(fh))) == 2


def test_config_file_overrides_flags(run, tmp_path):
    root, data, _, _, _ = run
    cfg = tmp_path / "dg.cfg"
    cfg.write_text("# overrides\nviews=1\nimage-size=32\n")
    out = tmp_path / "d2"
    assert main(["datagen", "--out", str(out), "--expressions", "1", "--views", "4", "--uv-res", "16",
                 "--config", str(cfg)]) == 0
    man = dict(line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
               if "=" in line and not line.startswith("#"))
    assert man["n_views"] == "1" and man["image_size"] == "32"
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense=1\n")
    with pytest.raises(SystemExit):
        main(["datagen", "--out", str(out), "--config", str(bad)])


def test_gradcheck_verb(capsys):
    assert main(["gradcheck", "--ops", "add,mul,l1", "--seeds", "2"]) == 0
    log = capsys.readouterr().out
    assert log.count("pass=true") == 3 and "failed=0" in log


def test_pca_plot_verb(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    out = tmp_path / "pca.png"
    assert main(["pca-plot", "--out", str(out)]) == 0
    assert out.stat().st_size > 1000
    assert "event=pca_plot" in capsys.readouterr().out


def test_every_verb_is_registered():
    p = build_parser()
    verbs = set(p._subparsers._group_actions[0].choices)
    assert verbs == {"datagen", "train", "reconstruct", "refine", "animate", "benchmark", "gradcheck", "pca-plot"}


def test_missing_file_returns_error_code(tmp_path, capsys):
    assert main(["benchmark", "--asset", str(tmp_path / "nope.asset")]) == 2
    assert "kind=FileNotFoundError" in capsys.readouterr().out
