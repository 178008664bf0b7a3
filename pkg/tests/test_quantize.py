import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from donnsim import UsageError
from donnsim.quantize import (
    QuantParams,
    QuantTensor,
    bilinear_downsample,
    dequantize,
    fit_quant_params,
    preprocess_images,
    quantize,
)


def test_fit_identity_range():
    p = fit_quant_params(np.array([[0.0, 255.0]]))
    assert p.scale == 1.0 and p.floating_min == 0.0 and not p.degenerate


def test_fit_symmetric_range():
    p = fit_quant_params(np.array([[-1.0, 0.3, 1.0]]))
    assert p.scale == pytest.approx(2 / 255, rel=1e-15)
    assert p.floating_min == -1.0


def test_fit_constant_is_degenerate():
    p = fit_quant_params(np.zeros((3, 3)))
    assert p.degenerate and p.scale == 1.0
    assert np.all(quantize(np.zeros((3, 3)), p).data == 0)


def test_fit_empty():
    with pytest.raises(UsageError):
        fit_quant_params(np.zeros((0, 3)))


def test_quantize_endpoints_and_midpoint():
    x = np.array([[0.0, 255.0, 127.5, 128.5]])
    q = quantize(x, fit_quant_params(x)).data
    assert q.tolist() == [[0, 255, 128, 128]]  # half-to-even on 127.5 and 128.5


def test_quantize_clamps_out_of_range():
    p = QuantParams(scale=1.0, floating_min=0.0)
    assert quantize(np.array([[-5.0, 300.0]]), p).data.tolist() == [[0, 255]]


def test_dequantize_zero_is_floating_min():
    p = QuantParams(scale=0.5, floating_min=-3.0)
    assert dequantize(QuantTensor(np.zeros((1, 1), np.uint8), p))[0, 0] == -3.0


finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, (4, 5), elements=finite))
def test_round_trip_error_bound(x):
    p = fit_quant_params(x)
    err = np.abs(dequantize(quantize(x, p)) - x)
    if p.degenerate:
        assert np.all(err == 0)
    else:
        assert np.all(err <= p.scale / 2 * (1 + 1e-9) + 1e-12)


@given(arrays(np.uint8, (3, 4)), st.floats(min_value=1e-3, max_value=10), st.floats(min_value=-5, max_value=5))
def test_grid_fixed_point(data, scale, fmin):
    q = QuantTensor(data, QuantParams(scale=scale, floating_min=fmin))
    assert np.array_equal(quantize(dequantize(q), q.params).data, data)


@given(arrays(np.float64, (20,), elements=finite))
def test_quantize_monotone(x):
    x = np.sort(x)[None, :]
    q = quantize(x, fit_quant_params(x)).data[0]
    assert np.all(np.diff(q.astype(int)) >= 0)


# --- downsampling -----------------------------------------------------------

def _oracle_point(img, y, x):
    """Bilinear sample at a fractional (y, x) by direct 4-neighbour weighting."""
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, img.shape[0] - 1), min(x0 + 1, img.shape[1] - 1)
    fy, fx = y - y0, x - x0
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
            + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])


def _oracle_antialias(img, out_shape):
    out = np.zeros(out_shape)
    sy, sx = img.shape[0] / out_shape[0], img.shape[1] / out_shape[1]
    for i in range(out_shape[0]):
        for j in range(out_shape[1]):
            cy, cx = (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5
            num = den = 0.0
            for r in range(img.shape[0]):
                for c in range(img.shape[1]):
                    w = max(0.0, 1 - abs(r - cy) / max(sy, 1)) * max(0.0, 1 - abs(c - cx) / max(sx, 1))
                    num += w * img[r, c]
                    den += w
            out[i, j] = num / den
    return out


RAMP = np.arange(16, dtype=float).reshape(4, 4)


def test_ramp_corners_oracle():
    expected = np.array([[_oracle_point(RAMP, y, x) for x in (0, 3)] for y in (0, 3)])
    assert np.allclose(bilinear_downsample(RAMP, (2, 2), "corners"), expected)
    assert expected.tolist() == [[0, 3], [12, 15]]


def test_ramp_half_pixel_oracle():
    expected = np.array([[_oracle_point(RAMP, y, x) for x in (0.5, 2.5)] for y in (0.5, 2.5)])
    assert np.allclose(bilinear_downsample(RAMP, (2, 2), "half_pixel"), expected)


def test_ramp_antialias_oracle():
    assert np.allclose(bilinear_downsample(RAMP, (2, 2)), _oracle_antialias(RAMP, (2, 2)))


@pytest.mark.parametrize("method", ["antialias", "half_pixel", "corners"])
def test_constant_and_identity(method):
    img = np.full((28, 28), 0.37)
    assert np.allclose(bilinear_downsample(img, (7, 7), method), 0.37)
    rnd = np.random.default_rng(0).random((28, 28))
    assert np.allclose(bilinear_downsample(rnd, (28, 28), method), rnd)


def test_invalid_target():
    with pytest.raises(UsageError):
        bilinear_downsample(np.zeros((28, 28)), (0, 7))
    with pytest.raises(UsageError):
        bilinear_downsample(np.zeros((28, 28)), (29, 7))


@settings(max_examples=30)
@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)), st.sampled_from(["antialias", "half_pixel", "corners"]))
def test_downsample_range(img, method):
    out = bilinear_downsample(img, (5, 3), method)
    assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


def test_preprocess_shape():
    imgs = np.random.default_rng(1).integers(0, 256, (3, 28, 28), dtype=np.uint8)
    x = preprocess_images(imgs)
    assert x.shape == (3, 49) and 0 <= x.min() and x.max() <= 1
    assert np.allclose(x[1], bilinear_downsample(imgs[1] / 255.0).ravel())
