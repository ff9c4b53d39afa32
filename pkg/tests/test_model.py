"""Model core: parameter layout, activations, convolutions, gate, readout."""

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from volcodec.model import (
    dsc_forward,
    fusion_gate,
    hard_sigmoid,
    hard_tanh,
    hidden_zeros,
    masked_conv_forward,
    normalize_slice,
    pad_plane,
    predict_pixel,
    predict_slice,
    standard_conv_forward,
    update_hidden,
)
from volcodec.params import (
    DTYPE_F16,
    SRLW_HEADER_LEN,
    canonical_f32,
    init_params,
    load_weights,
    parameter_count,
    parse_srlw,
    quantize_weights_f16,
    save_weights,
    srlw_bytes,
    weights_digest,
)
from volcodec.errors import (
    BadDepth,
    BadMagic,
    CorruptStream,
    CountMismatch,
    TruncatedPayload,
)

from conftest import random_volume


# --- parameter counting -------------------------------------------------------


def test_parameter_count_default():
    p = init_params(m=16)
    assert parameter_count(p) == 4866


def test_parameter_count_decomposition():
    p = init_params(m=16)
    assert p.masked_w.size + p.masked_b.size == 1200
    assert p.std_w.size + p.std_b.size == 2400
    assert p.dw_w.size + p.dw_b.size == 416
    assert p.pw_w.size + p.pw_b.size == 816
    assert p.est_w.size + p.est_b.size == 34
    assert 1200 + 2400 + 416 + 816 + 34 == 4866


@pytest.mark.parametrize("m,expected", [(1, 261), (2, 526), (16, 4866)])
def test_parameter_count_small_widths(m, expected):
    assert parameter_count(init_params(m=m)) == expected


@given(m=st.integers(min_value=1, max_value=48))
@settings(max_examples=20, deadline=None)
def test_parameter_count_closed_form(m):
    # 7x7 kernels and a 5x5 depthwise kernel give 3M^2 + 256M + 2
    assert parameter_count(init_params(m=m)) == 3 * m * m + 256 * m + 2


# --- initialization -----------------------------------------------------------


def test_init_deterministic():
    a = init_params(m=4, seed=11)
    b = init_params(m=4, seed=11)
    for ta, tb in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta, tb)


def test_init_seed_changes_weights():
    a = init_params(m=4, seed=0)
    b = init_params(m=4, seed=1)
    assert not np.array_equal(a.masked_w, b.masked_w)


def test_init_biases_zero_weights_bounded():
    p = init_params(m=8, seed=3)
    for name, bound in [
        ("masked_w", np.sqrt(1.0 / 24)),
        ("std_w", np.sqrt(1.0 / 49)),
        ("dw_w", np.sqrt(1.0 / 25)),
        ("pw_w", np.sqrt(1.0 / 8)),
        ("est_w", np.sqrt(1.0 / 8)),
    ]:
        w = getattr(p, name)
        assert np.all(np.abs(w) <= bound)
    for name in ("masked_b", "std_b", "dw_b", "pw_b", "est_b"):
        assert np.all(getattr(p, name) == 0.0)


def test_init_is_f32_canonical():
    p = init_params(m=3, seed=9)
    q = canonical_f32(p)
    for tp, tq in zip(p.tensors(), q.tensors()):
        assert np.array_equal(tp, tq)


def test_bad_tensor_shape_rejected():
    p = init_params(m=2)
    with pytest.raises(ValueError):
        replace(p, est_w=np.zeros((3, 2)))


# --- activations --------------------------------------------------------------


def test_hard_sigmoid_values():
    xs = np.array([-4.0, -3.0, 0.0, 1.5, 3.0, 4.0])
    expected = np.array([0.0, 0.0, 0.5, 0.75, 1.0, 1.0])
    assert np.array_equal(hard_sigmoid(xs), expected)


def test_hard_tanh_values():
    xs = np.array([-2.0, -1.0, -0.3, 0.0, 0.7, 1.0, 2.0])
    expected = np.array([-1.0, -1.0, -0.3, 0.0, 0.7, 1.0, 2.0]).clip(-1, 1)
    assert np.array_equal(hard_tanh(xs), expected)


def test_activations_preserve_shape():
    x = np.zeros((3, 4, 5))
    assert hard_sigmoid(x).shape == (3, 4, 5)
    assert hard_tanh(x).shape == (3, 4, 5)


# --- convolution semantics ----------------------------------------------------


def _zeroed(p):
    kw = {}
    for name in ("masked_w", "masked_b", "std_w", "std_b", "dw_w", "dw_b",
                 "pw_w", "pw_b", "est_w", "est_b"):
        kw[name] = np.zeros_like(getattr(p, name))
    return replace(p, **kw)


def test_masked_conv_is_strictly_causal(rng, small_params):
    s = random_volume(rng, 1, 9, 9, 8).samples[0]
    base = masked_conv_forward(s, small_params).data
    for (pi, pj) in [(0, 0), (3, 4), (8, 8), (4, 0)]:
        mod = s.copy()
        mod[pi, pj] = (int(mod[pi, pj]) + 97) % 256
        out = masked_conv_forward(mod, small_params).data
        for i in range(9):
            for j in range(9):
                before = (i, j) <= (pi, pj)  # raster order, inclusive
                if before:
                    assert np.array_equal(out[i, j], base[i, j]), (i, j, pi, pj)


def test_masked_conv_perturbation_reaches_later_pixels(rng, small_params):
    s = random_volume(rng, 1, 9, 9, 8).samples[0]
    base = masked_conv_forward(s, small_params).data
    mod = s.copy()
    mod[4, 4] = (int(mod[4, 4]) + 97) % 256
    out = masked_conv_forward(mod, small_params).data
    assert not np.array_equal(out[4, 5], base[4, 5])


def test_masked_conv_zero_weights_gives_bias(rng, small_params):
    p = _zeroed(small_params)
    p = replace(p, masked_b=np.arange(3 * p.m, dtype=np.float64) * 0.1)
    s = random_volume(rng, 1, 6, 7, 8).samples[0]
    out = masked_conv_forward(s, p).data
    assert np.array_equal(out, np.broadcast_to(p.masked_b, (6, 7, 3 * p.m)))


def test_masked_conv_origin_sees_only_padding(rng, small_params):
    # every causal tap at (0, 0) lands in the zero padding, so the output
    # there is exactly the bias regardless of the slice contents
    s = random_volume(rng, 1, 8, 8, 8).samples[0]
    out = masked_conv_forward(s, small_params).data
    assert np.array_equal(out[0, 0], small_params.masked_b)


def test_standard_conv_counts_all_taps(small_params):
    # a one-hot input lights up each output position once per tap, so
    # summing the response of a single channel over the plane recovers
    # the kernel sum plus H*W biases
    s = np.zeros((9, 9), dtype=np.uint16)
    s[4, 4] = 1 << 8  # normalizes to exactly 1.0 at depth 8... (clipped below)
    s[4, 4] = 255
    out = standard_conv_forward(s, small_params).data
    x = 255.0 / 256.0
    got = out[:, :, 0].sum()
    expected = small_params.std_w[0].sum() * x + 81 * small_params.std_b[0]
    assert got == pytest.approx(expected, rel=1e-12)


def test_standard_conv_zero_padding_at_border(small_params):
    # slice is zero except the far corner; with a 7x7 kernel the (0, 0)
    # output cannot reach it and equals the bias
    s = np.zeros((10, 10), dtype=np.uint16)
    s[9, 9] = 200
    p = replace(small_params, std_b=np.full(3 * small_params.m, 0.25))
    out = standard_conv_forward(s, p).data
    assert np.array_equal(out[0, 0], p.std_b)
    assert not np.array_equal(out[9, 9], p.std_b)


def test_normalize_slice_range():
    s = np.array([[0, 255], [128, 1]], dtype=np.uint16)
    x = normalize_slice(s, 8)
    assert np.array_equal(x, s.astype(np.float64) / 256.0)
    assert normalize_slice(np.array([[4095]]), 12)[0, 0] == 4095.0 / 4096.0


def test_pad_plane_layout():
    x = np.ones((2, 3))
    out = pad_plane(x, 2)
    assert out.shape == (6, 7)
    assert out.sum() == 6.0
    assert np.array_equal(out[2:4, 2:5], x)


# --- depthwise-separable path -------------------------------------------------


def test_dsc_relu_blocks_negative_mid(small_params):
    # with positive h and a negative depthwise bias the mid values are
    # negative, the ReLU zeroes them, and fh collapses to the pointwise bias
    p = _zeroed(small_params)
    p = replace(p,
                dw_b=np.full(p.m, -5.0),
                pw_w=np.ones_like(p.pw_w),
                pw_b=np.full(3 * p.m, 0.125))
    h = np.full((4, 4, p.m), 0.5)
    fh = dsc_forward(h, p).data
    assert np.array_equal(fh, np.broadcast_to(p.pw_b, (4, 4, 3 * p.m)))


def test_dsc_positive_path(small_params):
    p = _zeroed(small_params)
    p = replace(p,
                dw_b=np.full(p.m, 2.0),
                pw_w=np.ones_like(p.pw_w))
    h = hidden_zeros(3, 3, p.m)
    fh = dsc_forward(h, p).data
    # mid = 2 everywhere, relu passes it, each fh channel sums m of them
    assert np.allclose(fh, 2.0 * p.m)


# --- gate ---------------------------------------------------------------------


def test_fusion_gate_formula():
    m = 2
    fx = np.array([0.0, 6.0, 0.0, -6.0, 0.5, -0.25])
    fh = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    h_prev = np.array([0.8, -0.4])
    out = fusion_gate(fx, fh, h_prev)
    # channel 0: r=hsig(0)=0.5, u=hsig(0)=0.5, c=htanh(0.5)=0.5
    assert out[0] == pytest.approx(0.5 * 0.8 + 0.5 * 0.5)
    # channel 1: u=hsig(-6)=0, c=htanh(-0.25)=-0.25 -> output is c
    assert out[1] == -0.25


def test_fusion_gate_update_saturation_keeps_hidden():
    m = 3
    fx = np.zeros(3 * m)
    fx[m:2 * m] = 6.0  # update pre-activation saturates at u = 1
    fh = np.zeros(3 * m)
    h_prev = np.array([0.3, -0.9, 0.02])
    assert np.array_equal(fusion_gate(fx, fh, h_prev), h_prev)


def test_fusion_gate_reset_scales_candidate_feature():
    m = 1
    h_prev = np.array([0.0])
    # r = hsig(-1.2) = 0.3; candidate = htanh(0.5 + 0.3 * 1.0) = 0.8
    fx = np.array([-1.2, -6.0, 0.5])
    fh = np.array([0.0, 0.0, 1.0])
    out = fusion_gate(fx, fh, h_prev)
    assert out[0] == pytest.approx(0.3 * 1.0 + 0.5)


def test_update_hidden_saturated_update_is_identity(rng, small_params):
    p = _zeroed(small_params)
    b = np.zeros(3 * p.m)
    b[p.m:2 * p.m] = 6.0
    p = replace(p, std_b=b)
    s = random_volume(rng, 1, 5, 6, 8).samples[0]
    h_prev = rng.uniform(-1, 1, size=(5, 6, p.m))
    assert np.array_equal(update_hidden(s, h_prev, p), h_prev)


def test_update_hidden_zero_everything_from_zero_state(rng, small_params):
    p = _zeroed(small_params)
    s = random_volume(rng, 1, 5, 5, 8).samples[0]
    h = hidden_zeros(5, 5, p.m)
    # u = 0.5, candidate = 0, h_prev = 0 -> stays exactly zero
    assert np.array_equal(update_hidden(s, h, p), h)


def test_hidden_state_stays_in_unit_interval(rng, default_params):
    # u in [0, 1] and c in [-1, 1], so h bounded by induction from zeros
    vol = random_volume(rng, 6, 12, 12, 8)
    h = hidden_zeros(12, 12, default_params.m)
    for t in range(6):
        h = update_hidden(vol.samples[t], h, default_params)
        assert np.all(h >= -1.0) and np.all(h <= 1.0)


# --- slice prediction ---------------------------------------------------------


def test_predict_slice_zero_weights_gives_bias_readout(rng, small_params):
    p = _zeroed(small_params)
    p = replace(p, est_b=np.array([0.375, -2.5]))
    s = random_volume(rng, 1, 6, 6, 8).samples[0]
    mu, logs = predict_slice(s, hidden_zeros(6, 6, p.m), p)
    assert np.all(mu == 0.375)
    assert np.all(logs == -2.5)


def test_predict_slice_log_s_clamped(rng, small_params):
    p = _zeroed(small_params)
    for raw, clamped in [(12.0, 7.0), (-12.0, -7.0), (3.0, 3.0)]:
        q = replace(p, est_b=np.array([0.0, raw]))
        _, logs = predict_slice(np.zeros((3, 3), dtype=np.uint16),
                                hidden_zeros(3, 3, p.m), q)
        assert np.all(logs == clamped)


def test_predict_pixel_matches_batch(rng, small_params):
    s = random_volume(rng, 1, 7, 9, 8).samples[0]
    h_prev = rng.uniform(-1, 1, size=(7, 9, small_params.m))
    mu_b, logs_b = predict_slice(s, h_prev, small_params)
    fh = dsc_forward(h_prev, small_params).data
    xpad = pad_plane(normalize_slice(s, 8), small_params.kernel // 2)
    fx_buf = np.empty(3 * small_params.m, dtype=np.float64)
    for i in range(7):
        for j in range(9):
            mu, logs = predict_pixel(xpad, small_params, fh, h_prev, i, j, fx_buf)
            assert mu == mu_b[i, j]
            assert logs == logs_b[i, j]


def test_predict_pixel_decode_order_recomputation(rng, small_params):
    # simulate decoding: start from an all-zero padded buffer, reveal each
    # sample only after predicting it; predictions must match the batch
    # pass over the finished slice bit for bit
    s = random_volume(rng, 1, 6, 8, 8).samples[0]
    h_prev = rng.uniform(-1, 1, size=(6, 8, small_params.m))
    mu_b, logs_b = predict_slice(s, h_prev, small_params)
    fh = dsc_forward(h_prev, small_params).data
    pad = small_params.kernel // 2
    xpad = np.zeros((6 + 2 * pad, 8 + 2 * pad), dtype=np.float64)
    fx_buf = np.empty(3 * small_params.m, dtype=np.float64)
    for i in range(6):
        for j in range(8):
            mu, logs = predict_pixel(xpad, small_params, fh, h_prev, i, j, fx_buf)
            assert mu == mu_b[i, j]
            assert logs == logs_b[i, j]
            xpad[i + pad, j + pad] = s[i, j] / 256.0


def test_predict_slice_accepts_shared_dsc(rng, small_params):
    from volcodec.model import _dsc, _predict_full
    s = random_volume(rng, 1, 5, 5, 8).samples[0]
    h_prev = rng.uniform(-1, 1, size=(5, 5, small_params.m))
    shared = _dsc(h_prev, small_params)
    a = _predict_full(s, h_prev, small_params)
    b = _predict_full(s, h_prev, small_params, fh=shared)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_update_hidden_accepts_shared_dsc(rng, small_params):
    s = random_volume(rng, 1, 5, 5, 8).samples[0]
    h_prev = rng.uniform(-1, 1, size=(5, 5, small_params.m))
    fh = dsc_forward(h_prev, small_params).data
    a = update_hidden(s, h_prev, small_params)
    b = update_hidden(s, h_prev, small_params, fh=fh)
    assert np.array_equal(a, b)


# --- half-precision quantization ----------------------------------------------


def test_f16_rounding_example():
    assert float(np.float16(0.1)) == 0.0999755859375


def test_quantize_f16_rounds_every_tensor():
    p = init_params(m=4, seed=2)
    q = quantize_weights_f16(p)
    for tp, tq in zip(p.tensors(), q.tensors()):
        assert np.array_equal(tq, tp.astype(np.float16).astype(np.float64))


def test_quantize_f16_idempotent():
    p = quantize_weights_f16(init_params(m=4, seed=2))
    q = quantize_weights_f16(p)
    for tp, tq in zip(p.tensors(), q.tensors()):
        assert np.array_equal(tp, tq)


# --- weights serialization ----------------------------------------------------


def test_srlw_header_layout():
    p = init_params(m=2, depth_bits=12, scale_l=8.0, seed=5)
    blob = srlw_bytes(p)
    assert blob[:4] == b"SRLW"
    assert blob[4] == 1            # version
    assert blob[5] == 0            # dtype f32
    assert int.from_bytes(blob[6:8], "little") == 2      # m
    assert int.from_bytes(blob[8:10], "little") == 7     # kernel
    assert int.from_bytes(blob[10:12], "little") == 5    # depthwise kernel
    assert blob[12] == 12          # depth bits
    assert np.frombuffer(blob[13:17], dtype="<f4")[0] == 8.0
    assert int.from_bytes(blob[17:21], "little") == 526
    assert len(blob) == SRLW_HEADER_LEN + 526 * 4


def test_srlw_round_trip_bitwise(tmp_path):
    p = init_params(m=3, depth_bits=8, seed=4)
    path = tmp_path / "w.srlw"
    save_weights(p, path)
    q = load_weights(path)
    assert (q.m, q.kernel, q.k_dsc, q.depth_bits, q.scale_l) == \
        (p.m, p.kernel, p.k_dsc, p.depth_bits, p.scale_l)
    for tp, tq in zip(p.tensors(), q.tensors()):
        assert np.array_equal(tp, tq)


def test_srlw_f16_file_matches_in_memory_quantization(tmp_path):
    p = init_params(m=3, seed=4)
    path = tmp_path / "w16.srlw"
    save_weights(p, path, dtype=DTYPE_F16)
    q = load_weights(path)
    ref = quantize_weights_f16(p)
    for tq, tr in zip(q.tensors(), ref.tensors()):
        assert np.array_equal(tq, tr)


def test_srlw_bad_magic():
    with pytest.raises(BadMagic):
        parse_srlw(b"NOPE" + b"\x00" * 40)


def test_srlw_bad_version():
    blob = bytearray(srlw_bytes(init_params(m=1)))
    blob[4] = 9
    with pytest.raises(CorruptStream):
        parse_srlw(bytes(blob))


def test_srlw_bad_depth():
    blob = bytearray(srlw_bytes(init_params(m=1)))
    blob[12] = 9
    with pytest.raises(BadDepth):
        parse_srlw(bytes(blob))


def test_srlw_count_mismatch():
    blob = bytearray(srlw_bytes(init_params(m=1)))
    blob[17:21] = (262).to_bytes(4, "little")
    with pytest.raises(CountMismatch):
        parse_srlw(bytes(blob))


def test_srlw_truncated():
    blob = srlw_bytes(init_params(m=1))
    with pytest.raises(TruncatedPayload):
        parse_srlw(blob[:-3])


def test_weights_digest_sensitivity():
    p = init_params(m=2, seed=6)
    d0 = weights_digest(p)
    assert len(d0) == 32
    assert weights_digest(init_params(m=2, seed=6)) == d0
    w = p.masked_w.copy()
    # flip one bit of one value at f32 precision
    raw = np.frombuffer(w[0, 0:1].astype("<f4").tobytes(), dtype=np.uint32)
    flipped = np.frombuffer(
        (raw ^ np.uint32(1)).tobytes(), dtype="<f4"
    ).astype(np.float64)
    w[0, 0] = flipped[0]
    q = replace(p, masked_w=w)
    assert weights_digest(q) != d0


def test_weights_digest_ignores_storage_dtype(tmp_path):
    # digest is defined over the canonical f32 form, so an f16 save/load
    # of already-f16 weights keeps the digest stable
    p = quantize_weights_f16(init_params(m=2, seed=8))
    path = tmp_path / "w.srlw"
    save_weights(p, path, dtype=DTYPE_F16)
    assert weights_digest(load_weights(path)) == weights_digest(p)
