import numpy as np
import pytest

from focal.desk import blob_classifier, desk_cnn
from focal.errors import IndexOutOfRange, NoConvAfterK, ShapeCompositionError, ShapeMismatch
from focal.graph import (
    Affine,
    Conv,
    Flatten,
    FocusedConv,
    GlobalAvgPool,
    Linear,
    MaxPool,
    ModelGraph,
    ReLU,
    ThresholdAoI,
    convert_to_fcnn,
    count_macs,
    downsample_points,
    forward,
    prefix_mask,
    split_index_for_conv_count,
    with_tau,
)
from focal.kernel import AoiMask, BlockConfig, ConvParams, align_mask, dense_conv, resize_mask
from focal.tensor import channel_sum


def conv(rng, ic, oc, k=3, s=1, p=1):
    return Conv(ConvParams(ic, oc, k, k, s, p), rng.standard_normal((oc, ic, k, k)), rng.standard_normal(oc))


def small_model(seed=0):
    rng = np.random.default_rng(seed)
    return ModelGraph(
        (2, 8, 8),
        (conv(rng, 2, 4), ReLU(), MaxPool(2, 2), conv(rng, 4, 4), ReLU(), conv(rng, 4, 3, 1, 1, 0), GlobalAvgPool(),
         Linear(rng.standard_normal((5, 3)), np.zeros(5))),
        name="small",
    )


def test_layer_dims_and_output():
    g = small_model()
    assert g.out_dims(0) == (4, 8, 8) and g.out_dims(2) == (4, 4, 4)
    assert g.output_dims == (5, 1, 1)
    out = forward(g, np.ones((1, 2, 8, 8), np.float32)).output
    assert out.shape == (1, 5, 1, 1) and out.dtype == np.float32


def test_shape_composition_error_reports_index():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeCompositionError) as info:
        ModelGraph((2, 8, 8), (conv(rng, 2, 4), ReLU(), conv(rng, 3, 4)))
    assert info.value.layer_index == 2
    with pytest.raises(ShapeCompositionError):
        ModelGraph((2, 8, 8), (Flatten(), Linear(np.ones((2, 5)), np.zeros(2))))


def test_threshold_ordering_rules():
    rng = np.random.default_rng(0)
    c = conv(rng, 2, 2)
    f = FocusedConv(c.params, c.weights, c.bias)
    with pytest.raises(ShapeCompositionError):
        ModelGraph((2, 4, 4), (f,))
    with pytest.raises(ShapeCompositionError):
        ModelGraph((2, 4, 4), (ThresholdAoI(0.0), c))
    with pytest.raises(ShapeCompositionError):
        ModelGraph((2, 4, 4), (ThresholdAoI(0.0), ThresholdAoI(1.0)))
    ModelGraph((2, 4, 4), (c, ThresholdAoI(0.0), f))


def test_forward_input_and_capture_checks():
    g = small_model()
    with pytest.raises(ShapeMismatch):
        forward(g, np.ones((1, 3, 8, 8)))
    with pytest.raises(IndexOutOfRange):
        forward(g, np.ones((1, 2, 8, 8)), capture=99)
    res = forward(g, np.ones((1, 2, 8, 8)), capture=2)
    assert res.captured.shape == (1, 4, 4, 4) and res.aoi is None


def test_first_layer_matches_kernel():
    g = small_model()
    x = np.random.default_rng(1).standard_normal((1, 2, 8, 8)).astype(np.float32)
    c = g.layers[0]
    assert forward(g, x, capture=0).captured.tobytes() == dense_conv(x, c.weights, c.bias, c.params).tobytes()


def test_maxpool_gap_flatten_affine_linear():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    assert MaxPool(2, 2).run(x, None, None)[0, 0].tolist() == [[5, 7], [13, 15]]
    assert MaxPool(3, 1).run(x, None, None)[0, 0].tolist() == [[10, 11], [14, 15]]
    assert GlobalAvgPool().run(x, None, None)[0, 0, 0, 0] == 7.5
    assert Flatten().run(x, None, None).shape == (1, 16, 1, 1)
    a = Affine([2.0], [1.0])
    assert a.run(x, None, None)[0, 0, 0, 1] == 3.0
    lin = Linear(np.eye(2, 16), [0.5, 0.0])
    assert lin.run(x, None, None).reshape(-1).tolist() == [0.5, 1.0]
    with pytest.raises(ShapeMismatch):
        Linear(np.ones((2, 3)), np.zeros(3))


def test_convert_structure_and_sharing():
    g = small_model()
    f = convert_to_fcnn(g, 2, 0.5, BlockConfig(4), fill="bias")
    assert len(f) == len(g) + 1 and f.threshold_index == 3
    assert isinstance(f.layers[3], ThresholdAoI) and f.layers[3].tau == 0.5
    assert all(type(l) is Conv for l in f.layers[:3] if isinstance(l, Conv))
    focused = [l for l in f.layers if isinstance(l, FocusedConv)]
    assert len(focused) == 2 and all(l.block.block_size == 4 and l.fill == "bias" for l in focused)
    assert focused[0].weights is g.layers[3].weights
    assert not g.is_focused and f.is_focused
    assert with_tau(f, 1.0).layers[3].tau == 1.0 and f.layers[3].tau == 0.5


def test_convert_errors():
    g = small_model()
    with pytest.raises(IndexOutOfRange):
        convert_to_fcnn(g, 0, 0.0)
    with pytest.raises(IndexOutOfRange):
        convert_to_fcnn(g, len(g), 0.0)
    with pytest.raises(NoConvAfterK):
        convert_to_fcnn(g, 5, 0.0)
    with pytest.raises(ValueError):
        convert_to_fcnn(convert_to_fcnn(g, 2, 0.0), 1, 0.0)
    with pytest.raises(ValueError):
        with_tau(g, 1.0)


def test_tau_minus_inf_is_bit_exact():
    g = small_model()
    f = convert_to_fcnn(g, 2, -np.inf)
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.standard_normal((1, 2, 8, 8)).astype(np.float32)
        assert forward(f, x).output.tobytes() == forward(g, x).output.tobytes()


def _zeroed_reference(g, k, x):
    """Dense forward where every conv after layer k outputs zeros."""
    for i, layer in enumerate(g.layers):
        x = layer.run(x, None, None)
        if i > k and isinstance(layer, Conv):
            x = np.zeros_like(x)
    return x


def test_tau_plus_inf_zeroes_focused_outputs():
    g = small_model()
    f = convert_to_fcnn(g, 2, np.inf)
    x = np.random.default_rng(3).standard_normal((1, 2, 8, 8)).astype(np.float32)
    res = forward(f, x)
    assert res.aoi.count() == 0
    assert res.output.tobytes() == _zeroed_reference(g, 2, x).tobytes()


def test_aoi_follows_channel_sum_and_resizes():
    g = small_model(5)
    x = np.random.default_rng(4).standard_normal((1, 2, 8, 8)).astype(np.float32)
    s = channel_sum(forward(g, x, capture=2).captured)
    tau = float(np.median(s))
    f = convert_to_fcnn(g, 2, tau, BlockConfig(1))
    res = forward(f, x, capture=4)
    assert res.aoi == AoiMask(s[0, 0] >= tau)
    # focused conv output at AoI positions equals the dense conv there
    dense = forward(g, x, capture=3).captured
    sel = res.aoi.bits
    assert res.captured[0][:, sel].tobytes() == dense[0][:, sel].tobytes()
    assert (res.captured[0][:, ~sel] == 0).all()


def test_downsample_points_and_split():
    g = desk_cnn()
    assert downsample_points(g) == [4, 9, 14]
    assert g.conv_indices() == [0, 2, 5, 7, 10, 12]
    assert split_index_for_conv_count(g, 2) == 4
    assert split_index_for_conv_count(g, 4) == 9
    with pytest.raises(IndexOutOfRange):
        split_index_for_conv_count(g, 6)
    assert downsample_points(blob_classifier())[0] == 4
    strided = ModelGraph((1, 8, 8), (Conv(ConvParams(1, 1, 3, 3, 2, 1), np.ones((1, 1, 3, 3)), [0]),))
    assert downsample_points(strided) == [0]


def test_count_macs_matches_executed():
    g = desk_cnn()
    f = convert_to_fcnn(g, 4, 0.0, BlockConfig(8))
    x = np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)
    macs = {}
    res = forward(f, x, macs=macs)
    report = count_macs(f, aoi=res.aoi)
    assert {e.index: e.focused for e in report.entries} == macs
    assert count_macs(g).dense_total == 10322048
    assert report.dense_total == count_macs(g).dense_total


def test_count_macs_fraction_prefix():
    f = convert_to_fcnn(desk_cnn(), 4, 0.0)
    r = count_macs(f, aoi_fraction=0.5)
    for e in r.entries:
        if e.type == "focused_conv":
            assert e.focused * 2 == e.dense
    assert prefix_mask(4, 4, 0.25).bits.reshape(-1).tolist() == [True] * 4 + [False] * 12
    assert r.to_dict()["focused_total"] == r.focused_total


def test_resize_consistency_across_focused_layers():
    f = convert_to_fcnn(desk_cnn(), 4, 0.0, BlockConfig(1))
    m = AoiMask(np.random.default_rng(0).random((32, 32)) < 0.3)
    small = resize_mask(m, 16, 16)
    assert small.bits.tolist() == m.bits[::2, ::2].tolist()
    assert align_mask(small, BlockConfig(1)) == small
