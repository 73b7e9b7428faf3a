import numpy as np
import pytest

from splatavatar.data import generate_dataset
from splatavatar.dynamic import UNetConfig
from splatavatar.model import AvatarModel, ModelConfig
from splatavatar.recon import ReconConfig
from splatavatar.rig import build_rig
from splatavatar.uvmaps import TexelSpace


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)


def tiny_model_config(seed=0) -> ModelConfig:
    recon = ReconConfig(image_size=64, token_dim=32, heads=2, encoder_depth=1, self_depth=1, cross_depth=1,
                        query_h=8, query_w=8, uv_res=32, decoder_width=16, id_dim=8)
    return ModelConfig(recon=recon, unet=UNetConfig(id_dim=8, base=8, depth=2), seed=seed)


@pytest.fixture(scope="session")
def rig():
    return build_rig(0)


@pytest.fixture(scope="session")
def space64(rig):
    return TexelSpace.build(rig, 64)


@pytest.fixture(scope="session")
def space32(rig):
    return TexelSpace.build(rig, 32)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """1 identity x 3 frames x 4 views at 64 px, 32x32 UV."""
    root = tmp_path_factory.mktemp("tiny_ds")
    return generate_dataset(root, 1, 3, 4, seed=3, image_size=64, uv_res=32)


@pytest.fixture
def tiny_model(tiny_dataset):
    return AvatarModel(tiny_model_config(), rig=tiny_dataset.rig)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
