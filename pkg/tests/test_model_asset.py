import numpy as np
import pytest

from splatavatar.asset import AssetError, AvatarAsset, dumps, load_asset, loads, save_asset
from splatavatar.autodiff import no_grad
from splatavatar.data import load_png
from splatavatar.model import AvatarModel
from splatavatar.pipeline import animate, model_for_asset, reconstruct_asset
from splatavatar.rig import ExpressionParams

from conftest import tiny_model_config


@pytest.fixture
def saved_model(tmp_path, tiny_dataset):
    m = AvatarModel(tiny_model_config(2), rig=tiny_dataset.rig)
    # give the UNet a nonzero output so the dynamic path matters
    m.unet.outc.weight.data = np.random.default_rng(0).normal(0, 1e-3, m.unet.outc.weight.data.shape).astype(np.float32)
    path = tmp_path / "model.ckpt"
    m.save(path)
    return m, path


def test_model_save_load_is_exact(saved_model):
    m, path = saved_model
    back = AvatarModel.load(path, rig=m.rig)
    a, b = m.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
    assert back.cfg == m.cfg


def test_named_parameters_prefixes(tiny_model):
    names = list(tiny_model.named_parameters())
    assert all(n.startswith(("recon.", "unet.")) for n in names)
    assert any(n.startswith("unet.") for n in names)


def test_asset_roundtrip_renders_identically(tmp_path, saved_model, tiny_dataset):
    m, path = saved_model
    img = tiny_dataset.load_frame(0, 0, 1)[0]
    asset = reconstruct_asset(m, img[None], weights_path=path, log=None)
    save_asset(asset, tmp_path / "a.asset")
    back = load_asset(tmp_path / "a.asset")
    assert np.array_equal(back.raw, asset.raw) and np.array_equal(back.f_id, asset.f_id)
    assert back.input_hashes == asset.input_hashes and back.unet_sha256 == asset.unet_sha256
    e = ExpressionParams.neutral(m.rig.n_expr)
    e.psi[:2] = [0.8, -0.4]
    cams = [tiny_dataset.cameras[2]]
    m2 = model_for_asset(back)
    a_frames, _ = animate(m, asset, [e], cams, log=None)
    b_frames, _ = animate(m2, back, [e], cams, log=None)
    assert np.array_equal(a_frames[0], b_frames[0])


def test_asset_rejects_weight_mismatch(tmp_path, saved_model, tiny_dataset):
    m, path = saved_model
    asset = reconstruct_asset(m, tiny_dataset.load_frame(0, 0, 0)[0], weights_path=path, log=None)
    other = AvatarModel(tiny_model_config(9), rig=m.rig)
    other.save(path)
    with pytest.raises(ValueError, match="hash"):
        model_for_asset(asset)
    with pytest.raises(FileNotFoundError):
        model_for_asset(asset, tmp_path / "missing.ckpt")


def test_asset_corruption_is_detected(saved_model, tiny_dataset):
    m, path = saved_model
    asset = reconstruct_asset(m, tiny_dataset.load_frame(0, 0, 0)[0], weights_path=path, log=None)
    blob = dumps(asset)
    with pytest.raises(AssetError):
        loads(b"NOTASSET" + blob[8:])
    with pytest.raises(AssetError):
        loads(blob[: len(blob) // 2])
    i = blob.index(b"RIG_") + 40
    bad = blob[:i] + bytes([blob[i] ^ 0xFF]) + blob[i + 1:]
    with pytest.raises(AssetError):
        loads(bad)


def test_asset_validate_shapes(saved_model, tiny_dataset):
    m, _ = saved_model
    asset = reconstruct_asset(m, tiny_dataset.load_frame(0, 0, 0)[0], log=None)
    bad = asset.copy()
    bad.raw = bad.raw[:8]
    with pytest.raises(AssetError):
        bad.validate()
    bad = asset.copy()
    bad.raw[0, 0, 0] = np.nan
    with pytest.raises(AssetError):
        dumps(bad)


def test_reconstruct_asset_records_inputs(tiny_model, tiny_dataset):
    imgs = np.stack([tiny_dataset.load_frame(0, 0, v)[0] for v in range(3)])
    lines = []
    asset = reconstruct_asset(tiny_model, imgs, log=lines.append)
    assert len(asset.input_hashes) == 3 and len(set(asset.input_hashes)) == 3
    assert asset.notes["encode_seconds"] > 0
    assert any("event=reconstruct" in ln and "n_images=3" in ln for ln in lines)
    with pytest.raises(ValueError):
        reconstruct_asset(tiny_model, imgs[:0], log=None)
    with pytest.raises(ValueError):
        reconstruct_asset(tiny_model, np.concatenate([imgs, imgs[:2]]), log=None)


def test_drive_static_equivalence_with_zero_unet(tiny_model, tiny_dataset):
    img = tiny_dataset.load_frame(0, 0, 0)[0]
    cam = tiny_dataset.cameras[0]
    e = ExpressionParams.neutral(tiny_model.rig.n_expr)
    e.psi[0] = 1.0
    with no_grad():
        f_id, raw = tiny_model.recon(img[None])
        a = tiny_model.drive(f_id, raw, e, cam).rgb.data
        b = tiny_model.drive(f_id, raw, e, cam, dyn_mask=np.zeros(tiny_model.space.resolution, bool)).rgb.data
    assert np.array_equal(a, b)


def test_png_roundtrip(tmp_path):
    from splatavatar.render import save_png

    img = np.random.default_rng(0).uniform(0, 1, (8, 9, 3))
    save_png(img, tmp_path / "x.png")
    back = load_png(tmp_path / "x.png")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9
