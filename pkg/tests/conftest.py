import numpy as np
import pytest

from sketchshot.backbone import BackboneConfig
from sketchshot.data import SyntheticSpec, generate_synthetic, split_classes
from sketchshot.training import Stage1Config, Stage2Config, train_stage1, train_stage2

# desk-scale profile shared across test modules
DESK_SPEC = SyntheticSpec(classes=20, per_class_per_domain=80, image_size=32, seed=0)
DESK_COUNTS = {"base": 10, "val": 4, "novel": 6}
DESK_BCFG = BackboneConfig(image_size=32, channels=(8, 16, 32), embed_dim=32)
DESK_S1 = Stage1Config(epochs=20, lr=0.05, scale=10.0, seed=0)
DESK_S2 = Stage2Config(epochs=10, episodes_per_epoch=25, n_drop=5, k_shot=5,
                       q_per_class=5, lr=0.02, seed=0)


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_synthetic(DESK_SPEC)


@pytest.fixture(scope="session")
def desk_split(desk_dataset):
    return split_classes(desk_dataset, DESK_COUNTS, seed=0)


@pytest.fixture(scope="session")
def stage1_ckpt(desk_dataset, desk_split):
    return train_stage1(desk_dataset, desk_split, DESK_S1, DESK_BCFG)


@pytest.fixture(scope="session")
def full_ckpt(stage1_ckpt, desk_dataset, desk_split):
    return train_stage2(stage1_ckpt, desk_dataset, desk_split, DESK_S2)
