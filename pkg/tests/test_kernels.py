import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcgla import verify
from qcgla.errors import ConfigError, ShapeError
from qcgla.isa import PEOpCode
from qcgla.kernels import (
    EXPECTED_PE_COUNT,
    DotRequest,
    KernelMapping,
    KernelTag,
    Stage,
    default_mapping,
    load_mapping,
    matmul,
    matvec,
    parse_mapping,
    q3_k_dot,
    q3_k_dot_many,
    q8_0_dot,
    q8_0_dot_many,
    validate_mapping,
)
from qcgla.quantcodec import (
    DType,
    quantize_q8_0,
    quantize_q8_k,
    quantize_tensor,
    ref_dot_q3_k_repacked,
    ref_dot_q8_0,
    repack_q3_k,
)


def _bits(x):
    return np.float32(x).tobytes()


@pytest.mark.parametrize("kernel", list(KernelTag))
def test_default_mapping_totals(kernel):
    m = default_mapping(kernel)
    assert m.pe_count == EXPECTED_PE_COUNT[kernel] == len(m.stages)
    assert validate_mapping(m) is m


def test_default_mapping_shapes():
    q8 = default_mapping("q8_0")
    q3 = default_mapping("Q3_K")
    assert (q8.leaf_count, q8.units_per_beat) == (16, 4)
    assert (q3.leaf_count, q3.units_per_beat) == (24, 3)
    ops8 = [s.op for s in q8.stages]
    assert ops8.count(PEOpCode.FMUL32) == 8 and ops8.count(PEOpCode.MOVE) == 6
    assert [s.op for s in q3.stages].count(PEOpCode.CVT53) == 24


@pytest.mark.parametrize("kernel", list(KernelTag))
def test_mapping_text_roundtrip(kernel):
    m = default_mapping(kernel)
    assert parse_mapping(m.to_text(), kernel) == m


def _edit(mapping, idx, stage):
    stages = list(mapping.stages)
    stages[idx] = stage
    return KernelMapping(mapping.kernel, tuple(stages))


def test_validate_rejects_forward_reference():
    m = default_mapping("q8_0")
    bad = _edit(m, 2, Stage(2, PEOpCode.AD24, (0, 5)))
    with pytest.raises(ConfigError, match="earlier stage"):
        validate_mapping(bad)


def test_validate_rejects_self_reference():
    m = default_mapping("q3_k")
    s = m.stages[2]
    with pytest.raises(ConfigError):
        validate_mapping(_edit(m, 2, Stage(s.pe, s.op, (0, 2))))


def test_validate_rejects_pe_order_and_range():
    m = default_mapping("q8_0")
    with pytest.raises(ConfigError, match="does not follow"):
        validate_mapping(_edit(m, 1, Stage(0, PEOpCode.SML8, ("stream:A", "stream:B"))))
    with pytest.raises(ConfigError, match="outside"):
        validate_mapping(_edit(m, 45, Stage(64, m.stages[45].op, m.stages[45].inputs)))


def test_validate_rejects_type_errors():
    m = default_mapping("q8_0")
    with pytest.raises(ConfigError, match="leaf"):
        validate_mapping(_edit(m, 0, Stage(0, PEOpCode.CVT53, ("stream:A", "stream:B"))))
    with pytest.raises(ConfigError, match="AD24"):
        validate_mapping(_edit(m, 2, Stage(2, PEOpCode.AD24, ("stream:A", 1))))


def test_validate_rejects_wrong_total():
    m = default_mapping("q8_0")
    shifted = KernelMapping(m.kernel, m.stages + (Stage(63, PEOpCode.MOVE, (8,)),))
    with pytest.raises(ConfigError):
        validate_mapping(shifted)


@pytest.mark.parametrize("text", ["pe=0 op=SML8", "pe=x op=SML8 in=stream:A,stream:B",
                                  "pe=0 op=NOPE in=0", "pe=0 op=SML8 in=stream:C,stream:B", "garbage"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_mapping(text, "q8_0")


def test_unknown_kernel():
    with pytest.raises(ConfigError):
        KernelTag.parse("q4_k")


def _two_block_q8_0():
    """Half-width Q8_0 mapping: two block groups and one collector (23 PEs)."""
    base = default_mapping("q8_0").stages[:22]
    return KernelMapping(KernelTag.Q8_0, base + (Stage(22, PEOpCode.MOVE, (10, 21)),))


def test_alternative_mapping_is_bit_identical():
    m = _two_block_q8_0()
    validate_mapping(m, check_totals=False)
    with pytest.raises(ConfigError):
        validate_mapping(m)
    rng = np.random.default_rng(0)
    pairs = [(verify.random_q8_0(rng, n), verify.random_q8_0(rng, n)) for n in (1, 2, 3, 7, 64)]
    assert [_bits(x) for x in q8_0_dot_many(pairs, m)] == [_bits(x) for x in q8_0_dot_many(pairs)]


def test_mapping_file_override(tmp_path):
    p = tmp_path / "q8.map"
    p.write_text(default_mapping("q8_0").to_text())
    assert load_mapping(p, "q8_0") == default_mapping("q8_0")


def test_wrong_kernel_mapping_rejected():
    rng = np.random.default_rng(1)
    a = verify.random_q8_0(rng, 1)
    with pytest.raises(ConfigError):
        q8_0_dot(a, a, default_mapping("q3_k"))


def test_broken_mapping_is_caught_by_check_suite():
    m = default_mapping("q8_0")
    # fold a half-total instead of the block total: well formed, numerically wrong
    bad = _edit(m, 7, Stage(7, PEOpCode.MOVE, (5,)))
    validate_mapping(bad)
    res = verify.bitexact_q8_0(np.random.default_rng(2), 20, 1024, mapping=bad)
    assert not res.passed and res.counterexample is not None


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 40))
def test_q8_0_dot_bit_exact(seed, n):
    rng = np.random.default_rng(seed)
    a, b = verify.random_q8_0(rng, n), verify.random_q8_0(rng, n)
    assert _bits(q8_0_dot(a, b)) == _bits(ref_dot_q8_0(a, b))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 9))
def test_q3_k_dot_bit_exact(seed, n):
    rng = np.random.default_rng(seed)
    w, a = repack_q3_k(verify.random_q3_k(rng, n)), verify.random_q8_k(rng, n)
    assert _bits(q3_k_dot(w, a)) == _bits(ref_dot_q3_k_repacked(w, a))


def test_q3_k_accepts_unrepacked_weights():
    rng = np.random.default_rng(3)
    w, a = verify.random_q3_k(rng, 2), verify.random_q8_k(rng, 2)
    assert _bits(q3_k_dot_many([(w, a)])[0]) == _bits(ref_dot_q3_k_repacked(repack_q3_k(w), a))


def test_empty_sequences_and_batches():
    e8 = quantize_q8_0(np.zeros((0, 32)))
    assert q8_0_dot(e8, e8) == 0.0
    assert q8_0_dot_many([]).shape == (0,)
    assert q3_k_dot_many([]).shape == (0,)


def test_length_mismatch():
    rng = np.random.default_rng(4)
    with pytest.raises(ShapeError):
        q8_0_dot(verify.random_q8_0(rng, 2), verify.random_q8_0(rng, 3))
    with pytest.raises(ShapeError):
        q3_k_dot(repack_q3_k(verify.random_q3_k(rng, 1)), verify.random_q8_k(rng, 2))


def test_batched_equals_single():
    rng = np.random.default_rng(5)
    pairs = [(verify.random_q8_0(rng, n), verify.random_q8_0(rng, n)) for n in (5, 1, 9)]
    assert [_bits(x) for x in q8_0_dot_many(pairs)] == [_bits(q8_0_dot(a, b)) for a, b in pairs]


@pytest.mark.parametrize("wtype", [DType.Q8_0, DType.Q3_K, DType.Q3_K_REPACKED])
def test_matvec_matches_reference_and_lanes(wtype):
    rng = np.random.default_rng(6)
    w = quantize_tensor(rng.normal(size=(5, 512)).astype(np.float32), wtype)
    x = rng.normal(size=512)
    if wtype == DType.Q8_0:
        act = quantize_q8_0(x)
        want = [ref_dot_q8_0(w.row(i), act) for i in range(5)]
    else:
        act = quantize_q8_k(x)
        rows = w.blocks if wtype == DType.Q3_K_REPACKED else repack_q3_k(w.blocks)
        want = [ref_dot_q3_k_repacked(rows[2 * i : 2 * i + 2], act) for i in range(5)]
    got1 = matvec(w, act)
    got3 = matvec(w, act, lanes=3)
    assert got1.tobytes() == got3.tobytes() == np.array(want, np.float32).tobytes()
    assert matmul(w, [act, act]).shape == (2, 5)


def test_matvec_errors():
    rng = np.random.default_rng(7)
    w = quantize_tensor(rng.normal(size=(2, 64)).astype(np.float32), DType.Q8_0)
    with pytest.raises(ShapeError):
        matvec(w, quantize_q8_0(np.zeros(32)))
    with pytest.raises(ConfigError):
        matvec(w, quantize_q8_0(np.zeros(64)), lanes=9)
    with pytest.raises(ShapeError):
        matvec(quantize_tensor(np.zeros((1, 256), np.float32), DType.Q8_K), quantize_q8_k(np.zeros(256)))


def test_dot_request_validation():
    DotRequest(4, 256, DType.Q3_K, DType.Q8_K, lanes=8)
    with pytest.raises(ShapeError):
        DotRequest(4, 100, DType.Q3_K, DType.Q8_K)
    with pytest.raises(ConfigError):
        DotRequest(4, 256, DType.Q3_K, DType.Q8_K, lanes=0)
