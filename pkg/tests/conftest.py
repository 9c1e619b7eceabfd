"""Shared fixtures: coarse phantoms and toy network configs sized for fast tests."""

import numpy as np
import pytest

from lunetkit.grid import LabelMask, PixelSpacing
from lunetkit.nets import LocalizerConfig, LUNetConfig, UNetConfig
from lunetkit.phantom import PhantomParams, generate_dataset


def coarse_params(size=64):
    """Same 128 mm field of view as the 256 px default, on a coarse grid."""
    return PhantomParams(
        image_size=size,
        spacing_mm=128.0 / size,
        translation_px=10.0 * size / 256.0,
    )


def tiny_net(size=64, crop=32, margin=0.10, base=4, mode="mu"):
    return LUNetConfig(
        localizer=LocalizerConfig(
            backbone=UNetConfig(levels=2, base_filters=base, input_size=(size, size), classes=3),
            head_units=(32, 8, 4),
            mode=mode,
        ),
        segmenter=UNetConfig(levels=2, base_filters=base, input_size=(crop, crop), classes=3),
        margin=margin,
        crop_size=(crop, crop),
    )


def label_mask(arr, dx=1.0, dy=1.0):
    return LabelMask(np.asarray(arr, dtype=np.int64), PixelSpacing(dx, dy))


@pytest.fixture(scope="session")
def coarse_records():
    return generate_dataset(coarse_params(), n=6, master_seed=11)


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_net()
