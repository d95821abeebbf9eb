import numpy as np
import pytest
import torch

from fusionq.errors import ConfigurationError
from fusionq.oracles import OracleConfig, image_feature_dim
from fusionq.dataset import make_clips, prepare_sample
from fusionq.scenesim import SceneConfig, generate_sequence


@pytest.fixture(scope="module")
def frames():
    return generate_sequence(SceneConfig(n_objects=(6, 6), n_frames=3, seed=2))


def prepare(frame, seed=0):
    return prepare_sample(frame, OracleConfig(), n_classes=3, cell_size=0.6, extent=54.4, seed=seed)


def test_prepare_sample(frames):
    sample = prepare(frames[0])
    assert sample.n_gt == 6
    assert sample.gt_boxes.shape == (6, 9)
    assert sample.gt_boxes.dtype == torch.float64
    assert len(sample.views) == 6
    for view in sample.views:
        assert view.feature_map.shape[-1] == image_feature_dim(3)
        assert view.boxes.shape[1] == 4
        assert view.boxes.shape[0] == view.scores.shape[0]
        assert view.gt_boxes.shape[0] == view.gt_depths.shape[0] == view.gt_indices.shape[0]
        assert torch.all(view.gt_depths > 0)
    assert sample.pc_boxes.shape[1] == 7
    assert sample.pc_appearance.shape == (sample.pc_boxes.shape[0], OracleConfig().feature_dim)
    assert len(sample.pillars) > 0


def test_prepare_sample_is_deterministic(frames):
    a, b = prepare(frames[1]), prepare(frames[1])
    assert torch.equal(a.pc_boxes, b.pc_boxes)
    assert np.array_equal(a.pillars.contents, b.pillars.contents)
    assert all(torch.equal(va.boxes, vb.boxes) for va, vb in zip(a.views, b.views))
    assert all(torch.equal(va.feature_map, vb.feature_map) for va, vb in zip(a.views, b.views))

    c = prepare(frames[1], seed=1)
    assert not torch.equal(a.views[0].feature_map, c.views[0].feature_map)


def test_every_gt_seen_by_some_view(frames):
    sample = prepare(frames[0])
    seen = torch.cat([view.gt_indices for view in sample.views]).unique()
    assert seen.tolist() == list(range(sample.n_gt))


def test_make_clips(frames):
    samples = [prepare(f) for f in frames]
    clips = make_clips(samples, 2)
    assert [[s.index for s in clip] for clip in clips] == [[0, 1], [1, 2]]
    assert len(make_clips(samples, 1)) == 3
    assert make_clips(samples, 4) == []
    with pytest.raises(ConfigurationError):
        make_clips(samples, 0)
