import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from heog import container
from heog.cnn.model import ModelArch, forward, init_weights
from heog.quant import (
    QuantScheme,
    pack,
    packed_nbytes,
    quantization_report,
    quantize,
    quantize_tensor,
    quantized_forward,
    unpack,
    write_report_csv,
)

INT_SCHEMES = [QuantScheme.INT8, QuantScheme.INT4, QuantScheme.INT2]
weights = arrays(
    np.float32, st.integers(1, 200), elements=st.floats(-10, 10, allow_nan=False, width=32)
)


def test_endpoints_map_to_range_limits():
    q = quantize_tensor(np.array([-1.0, 0.0, 1.0], np.float32), "int8")
    assert q.scale == pytest.approx(1 / 127)
    assert q.integers().tolist() == [-127, 0, 127]


def test_all_zero_tensor_gets_unit_scale():
    q = quantize_tensor(np.zeros(5), "int4")
    assert q.scale == 1.0 and not q.integers().any()


def test_subnormal_tensor_keeps_positive_scale():
    w = np.array([1e-45, -1e-45, 0.0], np.float32)
    q = quantize_tensor(w, "int8")
    assert q.scale > 0
    np.testing.assert_array_equal(q.dequantize(), w)


def test_rounding_is_half_to_even():
    # w / scale = [0.5, 1.5, 2.5, 127] -> [0, 2, 2, 127]
    w = np.array([0.5, 1.5, 2.5, 127.0])
    assert quantize_tensor(w, "int8").integers().tolist() == [0, 2, 2, 127]


def test_packing_bit_order_is_big_endian_in_byte():
    assert pack(np.array([1, -1]), 4) == bytes([0x1F])
    assert pack(np.array([1, -1, 0, 1]), 2) == bytes([0b01110001])
    assert pack(np.array([-8, 7, 3]), 4) == bytes([0x87, 0x30])


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([8, 4, 2]), st.data())
def test_pack_unpack_round_trip(bits, data):
    lim = 2 ** (bits - 1)
    q = np.array(data.draw(st.lists(st.integers(-lim, lim - 1), min_size=0, max_size=50)), dtype=np.int64)
    raw = pack(q, bits)
    assert len(raw) == -(-len(q) * bits // 8)
    np.testing.assert_array_equal(unpack(raw, bits, len(q)), q)


@settings(max_examples=60, deadline=None)
@given(weights, st.sampled_from(INT_SCHEMES))
def test_round_trip_error_within_half_step(w, scheme):
    q = quantize_tensor(w, scheme)
    err = np.abs(q.dequantize().astype(np.float64) - w.astype(np.float64))
    # float32 arithmetic in the dequantized value adds at most a few ulps
    assert np.all(err <= q.scale / 2 * (1 + 1e-6) + 1e-7)
    assert np.abs(q.integers()).max() <= scheme.qmax


@settings(max_examples=40, deadline=None)
@given(weights, st.sampled_from(list(QuantScheme)))
def test_requantizing_is_idempotent(w, scheme):
    once = quantize_tensor(w, scheme)
    twice = quantize_tensor(once.dequantize(), scheme)
    assert twice.payload == once.payload


def test_f32_is_identity_and_f16_is_half_precision():
    w = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    assert np.array_equal(quantize_tensor(w, "f32").dequantize(), w)
    np.testing.assert_array_equal(quantize_tensor(w, "f16").dequantize(), w.astype(np.float16).astype(np.float32))


def test_scheme_parsing_and_codes():
    assert QuantScheme.parse("4") is QuantScheme.INT4
    assert QuantScheme.parse(16) is QuantScheme.F16
    assert [QuantScheme.from_code(i) for i in range(5)] == list(QuantScheme)
    with pytest.raises(ValueError):
        QuantScheme.parse("int3")


# --- whole models ------------------------------------------------------------


@pytest.fixture(scope="module")
def model():
    arch = ModelArch()
    return arch, init_weights(arch, 7)


def test_payload_sizes_follow_bit_width(model):
    arch, store = model
    n = arch.parameter_count
    sizes = {s: quantize(store, s).payload_bytes for s in QuantScheme}
    assert sizes[QuantScheme.F32] == 4 * n
    assert sizes[QuantScheme.F16] == 2 * n
    assert sizes[QuantScheme.INT8] == n
    order = [sizes[s] for s in (QuantScheme.INT2, QuantScheme.INT4, QuantScheme.INT8, QuantScheme.F16, QuantScheme.F32)]
    assert order == sorted(order) and len(set(order)) == 5


def test_reference_parameter_count_size_arithmetic():
    assert 151447 * 4 / 1024 == pytest.approx(591.6, abs=0.05)
    assert packed_nbytes(151447, QuantScheme.F32) == 151447 * 4


def test_quantized_forward_equals_forward_on_dequantized(model):
    arch, store = model
    x = np.random.default_rng(1).normal(size=(6, 100, 5)).astype(np.float32)
    assert np.array_equal(quantized_forward(arch, quantize(store, "f32"), x), forward(arch, store, x))
    q = quantize(store, "int4")
    np.testing.assert_allclose(quantized_forward(arch, q, x), forward(arch, q.dequantize(), x), atol=1e-6)


def test_report_rows_use_measured_costs(model, tmp_path):
    arch, store = model
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 100, 5)).astype(np.float32)
    y = rng.integers(0, 10, 20)
    rows = quantization_report(arch, store, X, y)
    by = {r.scheme: r for r in rows}
    assert by["f32"].agreement == 1.0
    assert (by["int4"].time_us, by["int4"].energy_uj) == (301, 46)
    assert by["int4"].energy_est_uj == pytest.approx(46.05, abs=0.005)  # 153 mW x 301 us
    assert np.isnan(by["f32"].time_us)
    write_report_csv(rows, tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0].startswith("scheme,payload_kib") and len(lines) == 6
    assert lines[1].startswith("f32,475.5,475.6,")


# --- container ---------------------------------------------------------------


@pytest.mark.parametrize("scheme", list(QuantScheme))
def test_container_round_trip(model, scheme, tmp_path):
    arch, store = model
    q = quantize(store, scheme)
    size = container.save(tmp_path / "w.eswt", q)
    back = container.load(tmp_path / "w.eswt")
    assert size == q.container_bytes
    assert back.scheme is scheme
    for a, b in zip(q.layers, back.layers):
        assert (a.kind, a.weights.shape, a.weights.scale, a.weights.payload) == (
            b.kind, b.weights.shape, b.weights.scale, b.weights.payload,
        )
        assert a.bias.payload == b.bias.payload


def test_container_header_layout(model):
    arch, store = model
    data = container.encode(quantize(store, "int4"))
    assert data[:4] == b"ESWT"
    assert struct.unpack("<HH", data[4:8]) == (1, 7)
    kind, rank = data[8], data[9]
    assert (kind, rank) == (1, 3)
    assert struct.unpack("<3I", data[10:22]) == (7, 5, 64)
    assert data[22] == QuantScheme.INT4.code
    scale = struct.unpack("<f", data[23:27])[0]
    assert scale == pytest.approx(float(np.abs(store.layers[0].weights).max()) / 7, rel=1e-6)


def test_f32_container_overhead_is_headers_only(model):
    arch, store = model
    data = container.encode(store)
    n = arch.parameter_count
    # 8-byte file header; per layer 2 + 4*rank dims bytes and one scheme byte per block
    header = 8 + sum(2 + 4 * r.weights.ndim + 2 for r in store.layers)
    assert len(data) == 4 * n + header
    np.testing.assert_array_equal(container.decode(data).dequantize().flat(), store.flat())


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda d: b"XXXX" + d[4:], "not an ESWT"),
        (lambda d: d[:4] + struct.pack("<H", 9) + d[6:], "version"),
        (lambda d: d[:-3], "truncated"),
        (lambda d: d + b"\0", "trailing"),
        (lambda d: d[:8] + b"\x09" + d[9:], "kind"),
    ],
)
def test_container_rejects_malformed(model, mutate, msg):
    data = container.encode(quantize(model[1], "int8"))
    with pytest.raises(container.ContainerError, match=msg):
        container.decode(mutate(data))


def test_load_weights_dequantizes(model, tmp_path):
    arch, store = model
    container.save(tmp_path / "w.eswt", quantize(store, "int8"))
    back = container.load_weights(tmp_path / "w.eswt")
    back.check(arch)
    assert back.layers[0].weights.dtype == np.float32
    np.testing.assert_allclose(back.flat(), store.flat(), atol=float(np.abs(store.flat()).max()) / 127)
