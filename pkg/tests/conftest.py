import copy

import pytest

from fusionq.config import parse_config


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run long training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY = {
    "seed": 3,
    "scene": {
        "n_objects": [3, 3],
        "n_classes": 2,
        "extent": 20.0,
        "n_frames": 3,
        "rig": {"n_views": 4, "width": 160, "height": 96},
        "lidar": {"points_per_sr": 500.0, "max_range": 30.0, "clutter_count": 20},
    },
    "oracle": {"feature_dim": 8, "min_points": 1},
    "model": {
        "width": 16, "heads": 2, "layers": 2, "samples": 2, "hidden": 16, "ffn_hidden": 16,
        "conv_dim": 4, "roi_size": 3, "n_d": 4, "d_max": 30.0, "img_cap": 12, "pc_cap": 12,
        "channels_per_scalar": 4,
    },
    "history": {"per_frame": 4, "frames": 1},
    "training": {"steps": 2, "sequences": 1, "log_every": 1},
    "eval": {"thresholds": [1.0, 2.0], "sequences": 1},
    "bench": {"extent": 20.0, "cell_size": 0.5, "max_range": 30.0, "n_frames": 1, "n_objects": [2, 2]},
    "ablate": {
        "formulation": ["distribution"],
        "cross_attention": [True],
        "history_frames": [0],
        "modality_mix": [[0.0, 0.0, 1.0]],
    },
}


@pytest.fixture
def tiny_data():
    """A fresh copy of the smallest experiment configuration as plain data."""
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_config(tiny_data):
    return parse_config(tiny_data)
