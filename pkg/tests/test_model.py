"""Model assembly: toggles, tap selection, parameter registry."""

import numpy as np
import pytest

from lesionseg.autodiff import Tensor
from lesionseg.backbone import EncoderConfig
from lesionseg.errors import ValidationError
from lesionseg.model import ModelConfig, SegmentationModel

SMALL_ENC = EncoderConfig(stage_channels=(4, 8), total_stride=4, feature_channels=8)


def small_config(**kw):
    return ModelConfig(encoder=SMALL_ENC, **kw)


def test_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(pooling="sum")
    with pytest.raises(ValidationError):
        ModelConfig(encoder_tap=5)
    with pytest.raises(ValidationError):
        ModelConfig(similarity="cosine")
    with pytest.raises(ValidationError):
        ModelConfig(memory_capacity=0)
    with pytest.raises(ValidationError):
        small_config(encoder_tap=2)   # third-last stage needs 3 stages


def test_tap_stage_index():
    assert ModelConfig(encoder_tap=4).tap_stage_index == 2
    assert ModelConfig(encoder_tap=3).tap_stage_index == 1
    assert ModelConfig(encoder_tap=2).tap_stage_index == 0


@pytest.mark.parametrize("tap", [2, 3, 4])
def test_coarse_tap_shape_per_stage(tap):
    model = SegmentationModel(ModelConfig(encoder_tap=tap), seed=0)
    emb = model.encoder.encode(Tensor(np.random.default_rng(0).random((1, 64, 64))))
    coarse = model.coarse_tap(emb.skips)
    assert coarse.shape == (8, 8, 8)   # C/8 at feature resolution for every tap


def test_default_parameter_count():
    model = SegmentationModel(ModelConfig(), seed=0)
    assert model.parameter_count() == 151673
    described = model.describe()
    assert described.splitlines()[-1] == "total\t\t151673"
    assert len(model.parameters()) == 44


def test_merge_baseline_is_identity():
    model = SegmentationModel(small_config(use_sfm=False, use_msff=False), seed=1)
    assert model.fusion is None and model.reduce is None and model.tap_proj is None
    y = Tensor(np.random.default_rng(1).standard_normal((4, 4, 4)))
    assert model.merge_branches(y, None, []) is y


def test_merge_concat_reduce_path():
    model = SegmentationModel(small_config(use_sfm=True, use_msff=False), seed=2)
    assert model.fusion is None and model.reduce is not None
    y = Tensor(np.random.default_rng(2).standard_normal((4, 4, 4)))
    z = Tensor(np.random.default_rng(3).standard_normal((4, 4, 4)))
    merged = model.merge_branches(y, z, [])
    assert merged.shape == (4, 4, 4)


def test_toggle_parameter_sets():
    full = set(SegmentationModel(small_config(), seed=0).parameters())
    base = set(SegmentationModel(small_config(use_sfm=False, use_msff=False),
                                 seed=0).parameters())
    concat = set(SegmentationModel(small_config(use_msff=False), seed=0).parameters())
    assert base < full
    assert any(n.startswith("fusion.") for n in full - base)
    assert any(n.startswith("reduce.") for n in concat - base)


def test_use_current_value_widens_decoder():
    cfg = small_config(use_current_value=True)
    model = SegmentationModel(cfg, seed=3)
    frame = Tensor(np.random.default_rng(4).random((1, 16, 16)))
    emb = model.encoder.encode(frame)
    fused = model.merge_branches(emb.value, emb.value, emb.skips)
    logits = model.decode(fused, emb.skips, current_value=emb.value)
    assert logits.shape == (1, 16, 16)


def test_seed_determinism():
    a = SegmentationModel(small_config(), seed=5).parameters()
    b = SegmentationModel(small_config(), seed=5).parameters()
    c = SegmentationModel(small_config(), seed=6).parameters()
    assert all((a[k].data == b[k].data).all() for k in a)
    assert any((a[k].data != c[k].data).any() for k in a)


def test_load_parameter_data_round_trip():
    model = SegmentationModel(small_config(), seed=7)
    snapshot = {k: v.data.copy() for k, v in model.parameters().items()}
    for p in model.parameters().values():
        p.data = p.data + 1.0
    model.load_parameter_data(snapshot)
    assert all((model.parameters()[k].data == snapshot[k]).all() for k in snapshot)
    with pytest.raises(ValidationError, match="name mismatch"):
        model.load_parameter_data({"bogus": np.zeros(1)})
    bad = dict(snapshot)
    first = next(iter(bad))
    bad[first] = np.zeros((1, 2, 3))
    with pytest.raises(ValidationError, match="shape"):
        model.load_parameter_data(bad)
