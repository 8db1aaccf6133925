import numpy as np
import pytest

from heatlens.data import polygon_mask, structure_mask, synth_pair, synth_scene


def test_same_seed_identical_pair():
    a, b = synth_pair(3, 64), synth_pair(3, 64)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    assert not np.array_equal(a[0].data, synth_pair(4, 64)[0].data)


@pytest.mark.parametrize("seed", range(5))
def test_shapes_and_range(seed):
    opt, sar = synth_pair(seed, 48, dtype="f64")
    assert opt.shape == (3, 48, 48) and sar.shape == (1, 48, 48)
    for x in (opt.data, sar.data):
        assert x.min() >= 0.0 and x.max() <= 1.0


def _iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


def test_modalities_share_structure():
    ious = []
    for seed in range(20):
        opt, sar, support = synth_scene(seed, 64)
        ious.append(_iou(structure_mask(opt, smooth=1), structure_mask(sar)))
        assert _iou(structure_mask(opt, smooth=1), support) > 0.9
    assert np.mean(ious) > 0.9


def test_polygon_mask_square():
    verts = np.array([[2.0, 2.0], [2.0, 6.0], [6.0, 6.0], [6.0, 2.0]])
    mask = polygon_mask(verts, 10)
    assert mask[4, 4] and not mask[0, 0] and not mask[8, 8]
    assert 12 <= mask.sum() <= 25
