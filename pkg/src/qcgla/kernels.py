"""
Q8_0 and Q3_K dot products expressed as linear-array pipelines of PE instructions.

A :class:`KernelMapping` is a list of stages, one per PE, in pipeline order.
Each stage names its instruction and where its operands come from: an
earlier stage, or one of the two input streams.  A *beat* is one pass of
data through the whole mapping; leaf stages (SML8 / CVT53) pull the next
word of each stream, FMUL32 stages reading streams pull the next scale.

The pipeline only produces per-block integers (Q3_K) or per-block binary32
terms (Q8_0).  Summation across blocks stays on the host side, in binary32
and in block order, which is what keeps kernel results bit-identical to the
reference dots.
"""

from __future__ import annotations

import enum
import functools
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from qcgla import isa
from qcgla.errors import ConfigError, ShapeError
from qcgla.isa import PEOpCode
from qcgla.quantcodec import (
    QK8_0,
    QK_K,
    BlockQ8_0,
    BlockQ8K,
    DType,
    QuantizedTensor,
    RepackedQ3K,
    SuperblockQ3K,
    repack_q3_k,
)

PES_PER_LANE = 64
MAX_LANES = 8
STREAMS = ("stream:A", "stream:B")
WORD_ELEMS = 8


class KernelTag(enum.Enum):
    Q8_0 = "Q8_0"
    Q3_K = "Q3_K"

    @classmethod
    def parse(cls, name) -> KernelTag:
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ConfigError(f"unknown kernel {name!r}") from None


EXPECTED_PE_COUNT = {KernelTag.Q8_0: 46, KernelTag.Q3_K: 51}
_LEAF_OP = {KernelTag.Q8_0: PEOpCode.SML8, KernelTag.Q3_K: PEOpCode.CVT53}
# words a leaf group consumes before its result is complete: a Q8_0 block, a Q3_K quarter superblock
_UNIT_WORDS = {KernelTag.Q8_0: QK8_0 // WORD_ELEMS, KernelTag.Q3_K: 8}


@dataclass(frozen=True)
class Stage:
    pe: int
    op: PEOpCode
    inputs: tuple  # ints (stage ids) or stream names


@dataclass(frozen=True)
class KernelMapping:
    kernel: KernelTag
    stages: tuple[Stage, ...]

    @property
    def pe_count(self) -> int:
        return len({s.pe for s in self.stages})

    @property
    def leaf_count(self) -> int:
        return sum(s.op in (PEOpCode.SML8, PEOpCode.CVT53) for s in self.stages)

    @property
    def units_per_beat(self) -> int:
        return self.leaf_count // _UNIT_WORDS[self.kernel]

    def terminals(self) -> list[int]:
        used = {i for s in self.stages for i in s.inputs if isinstance(i, int)}
        return [i for i in range(len(self.stages)) if i not in used]

    def to_text(self) -> str:
        lines = []
        for s in self.stages:
            ins = ",".join(str(i) for i in s.inputs)
            lines.append(f"pe={s.pe} op={s.op.value} in={ins}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DotRequest:
    m: int
    k: int
    weight_dtype: DType
    activation_dtype: DType
    lanes: int = 1

    def __post_init__(self):
        if self.k % DType(self.weight_dtype).block_len:
            raise ShapeError(f"k={self.k} is not a multiple of the weight block length")
        if not 1 <= self.lanes <= MAX_LANES:
            raise ConfigError(f"lanes must be in [1, {MAX_LANES}]")


# ---------------------------------------------------------------------------
# descriptor parsing and validation
# ---------------------------------------------------------------------------


def parse_mapping(text: str, kernel) -> KernelMapping:
    kernel = KernelTag.parse(kernel)
    stages = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = {}
        for tok in line.split():
            key, sep, val = tok.partition("=")
            if not sep or key in fields:
                raise ConfigError(f"line {lineno}: malformed field {tok!r}")
            fields[key] = val
        if set(fields) != {"pe", "op", "in"}:
            raise ConfigError(f"line {lineno}: expected pe=, op= and in= fields")
        try:
            pe = int(fields["pe"])
            op = PEOpCode(fields["op"])
        except ValueError:
            raise ConfigError(f"line {lineno}: bad pe or op") from None
        inputs = []
        for item in filter(None, fields["in"].split(",")):
            if item in STREAMS:
                inputs.append(item)
            else:
                try:
                    inputs.append(int(item))
                except ValueError:
                    raise ConfigError(f"line {lineno}: bad operand {item!r}") from None
        stages.append(Stage(pe, op, tuple(inputs)))
    return KernelMapping(kernel, tuple(stages))


def load_mapping(path: str | os.PathLike, kernel) -> KernelMapping:
    with open(path) as f:
        return validate_mapping(parse_mapping(f.read(), kernel))


_DEFAULT_FILES = {KernelTag.Q8_0: "q8_0.map", KernelTag.Q3_K: "q3_k.map"}


def default_mapping(kernel) -> KernelMapping:
    return _default_mapping(KernelTag.parse(kernel))


@functools.lru_cache(maxsize=None)
def _default_mapping(kernel: KernelTag) -> KernelMapping:
    text = resources.files("qcgla.mappings").joinpath(_DEFAULT_FILES[kernel]).read_text()
    return validate_mapping(parse_mapping(text, kernel))


def _stage_kinds(mapping: KernelMapping) -> list[str]:
    """Infer what each stage produces: 'int24', 'f32' or 'pair' (two packed binary32)."""
    kinds: list[str] = []
    leaf = _LEAF_OP[mapping.kernel]
    for idx, s in enumerate(mapping.stages):
        where = f"stage {idx} (pe={s.pe})"
        for i in s.inputs:
            if isinstance(i, int) and not 0 <= i < idx:
                raise ConfigError(f"{where}: operand {i} is not an earlier stage")
        src = [i if i in STREAMS else kinds[i] for i in s.inputs]
        if s.op in (PEOpCode.SML8, PEOpCode.CVT53):
            if s.op != leaf:
                raise ConfigError(f"{where}: {s.op.value} is not a {mapping.kernel.value} leaf")
            if tuple(s.inputs) != STREAMS:
                raise ConfigError(f"{where}: leaf operands must be stream:A,stream:B")
            kinds.append("int24")
        elif s.op == PEOpCode.AD24:
            if src != ["int24", "int24"]:
                raise ConfigError(f"{where}: AD24 needs two 24-bit stage operands")
            kinds.append("int24")
        elif s.op == PEOpCode.FMUL32:
            if len(src) != 2:
                raise ConfigError(f"{where}: FMUL32 needs two operands")
            if any(k in STREAMS for k in src) and tuple(s.inputs) != STREAMS:
                raise ConfigError(f"{where}: FMUL32 reads either both scale streams or two stages")
            if "pair" in src:
                raise ConfigError(f"{where}: FMUL32 cannot take a packed pair")
            kinds.append("f32")
        elif s.op == PEOpCode.MOVE:
            if src == ["int24"]:
                kinds.append("int24")
            elif src == ["f32", "f32"]:
                kinds.append("pair")
            else:
                raise ConfigError(f"{where}: MOVE routes one 24-bit word or packs two binary32 values")
    return kinds


@functools.lru_cache(maxsize=64)
def validate_mapping(mapping: KernelMapping, check_totals: bool = True) -> KernelMapping:
    """Check routing, operand types, PE ordering and the PE total of a mapping."""
    if not mapping.stages:
        raise ConfigError("mapping has no stages")
    prev = -1
    for s in mapping.stages:
        if not 0 <= s.pe < PES_PER_LANE:
            raise ConfigError(f"pe={s.pe} outside the {PES_PER_LANE}-PE lane")
        if s.pe <= prev:
            raise ConfigError(f"pe={s.pe} does not follow pe={prev} along the linear array")
        prev = s.pe
    kinds = _stage_kinds(mapping)
    unit = _UNIT_WORDS[mapping.kernel]
    if mapping.leaf_count == 0 or mapping.leaf_count % unit:
        raise ConfigError(f"leaf count {mapping.leaf_count} is not a multiple of {unit}")
    term_kinds = {kinds[i] for i in mapping.terminals()}
    want = "pair" if mapping.kernel == KernelTag.Q8_0 else "int24"
    if mapping.kernel == KernelTag.Q8_0:
        scale_reads = sum(s.op == PEOpCode.FMUL32 and s.inputs == STREAMS for s in mapping.stages)
        if scale_reads != mapping.units_per_beat:
            raise ConfigError("Q8_0 mapping needs one scale product per block")
        n_out = 2 * len(mapping.terminals()) if term_kinds == {"pair"} else 0
    else:
        n_out = len(mapping.terminals()) if term_kinds == {"int24"} else 0
    if n_out != mapping.units_per_beat:
        raise ConfigError(f"{mapping.kernel.value} mapping must emit one {want} result per unit")
    if check_totals and mapping.pe_count != EXPECTED_PE_COUNT[mapping.kernel]:
        raise ConfigError(
            f"{mapping.kernel.value} mapping uses {mapping.pe_count} PEs, expected {EXPECTED_PE_COUNT[mapping.kernel]}"
        )
    return mapping


# ---------------------------------------------------------------------------
# pipeline evaluation
# ---------------------------------------------------------------------------


def run_pipeline(mapping: KernelMapping, words: dict, scales: dict | None = None) -> list[np.ndarray]:
    """Evaluate one mapping over a batch of beats.

    ``words[s]`` is a (beats, leaf_count) uint64 array per stream name and
    ``scales[s]`` a (beats, n) float32 array.  Returns the terminal stage
    values in stage order, each of shape (beats,).
    """
    scales = scales or {}
    word_pos = {s: 0 for s in STREAMS}
    scale_pos = {s: 0 for s in STREAMS}
    vals: list[np.ndarray] = []
    kinds: list[str] = []

    def next_word(s):
        col = words[s][:, word_pos[s]]
        word_pos[s] += 1
        return col

    def next_scale(s):
        col = scales[s][:, scale_pos[s]]
        scale_pos[s] += 1
        return col

    def as_f32(i):
        return isa.int24_to_f32(vals[i], 0) if kinds[i] == "int24" else vals[i]

    for s in mapping.stages:
        if s.op == PEOpCode.SML8:
            v, k = isa.op_sml8(next_word(s.inputs[0]), next_word(s.inputs[1])), "int24"
        elif s.op == PEOpCode.CVT53:
            v, k = isa.op_cvt53(next_word(s.inputs[0]), next_word(s.inputs[1])), "int24"
        elif s.op == PEOpCode.AD24:
            v, k = isa.op_ad24(vals[s.inputs[0]], vals[s.inputs[1]]), "int24"
        elif s.op == PEOpCode.FMUL32:
            if s.inputs == STREAMS:
                v = isa.op_fmul32(next_scale(s.inputs[0]), next_scale(s.inputs[1]))
            else:
                v = isa.op_fmul32(as_f32(s.inputs[0]), as_f32(s.inputs[1]))
            k = "f32"
        elif len(s.inputs) == 1:
            v, k = isa.op_move(vals[s.inputs[0]]), "int24"
        else:
            v, k = isa.pack_f32_pair(vals[s.inputs[0]], vals[s.inputs[1]]), "pair"
        vals.append(v)
        kinds.append(k)
    return [vals[i] for i in mapping.terminals()]


def _host_accumulate(terms: np.ndarray) -> np.float32:
    if terms.size == 0:
        return np.float32(0.0)
    return np.add.accumulate(terms.astype(np.float32), dtype=np.float32)[-1]


def _check_mapping(mapping: KernelMapping | None, kernel: KernelTag) -> KernelMapping:
    if mapping is None:
        return default_mapping(kernel)
    if mapping.kernel != kernel:
        raise ConfigError(f"{mapping.kernel.value} mapping given to the {kernel.value} kernel")
    return validate_mapping(mapping, check_totals=False)


def _pad_rows(a: np.ndarray, rows: int) -> np.ndarray:
    if a.shape[0] == rows:
        return a
    pad = np.zeros((rows - a.shape[0],) + a.shape[1:], dtype=a.dtype)
    return np.concatenate([a, pad])


def _beat_rows(units: list[int], upb: int) -> list[int]:
    """Beats per sequence; every sequence starts on a fresh beat."""
    return [-(-u // upb) for u in units]


def q8_0_dot_many(pairs, mapping: KernelMapping | None = None) -> np.ndarray:
    """Evaluate many independent Q8_0 dots through one batched pipeline run."""
    mapping = _check_mapping(mapping, KernelTag.Q8_0)
    pairs = list(pairs)
    for a, b in pairs:
        if len(a) != len(b):
            raise ShapeError(f"block counts differ: {len(a)} vs {len(b)}")
    out = np.zeros(len(pairs), dtype=np.float32)
    if not pairs:
        return out
    upb = mapping.units_per_beat
    wpb = _UNIT_WORDS[KernelTag.Q8_0]
    sizes = [len(a) for a, _ in pairs]
    beats = _beat_rows(sizes, upb)

    def stream(side: int):
        ws, ds = [], []
        for (pair, n, nb) in zip(pairs, sizes, beats):
            blocks = pair[side]
            ws.append(_pad_rows(isa.pack_i8_lanes(blocks.q.reshape(n, wpb, WORD_ELEMS)), nb * upb))
            ds.append(_pad_rows(blocks.d.astype(np.float32), nb * upb))
        return np.concatenate(ws).reshape(-1, upb * wpb), np.concatenate(ds).reshape(-1, upb)

    wa, sa = stream(0)
    wb, sb = stream(1)
    outs = run_pipeline(mapping, {"stream:A": wa, "stream:B": wb}, {"stream:A": sa, "stream:B": sb})
    terms = np.stack([x for w in outs for x in isa.unpack_f32_pair(w)], axis=1).reshape(-1)
    pos = 0
    for i, (n, nb) in enumerate(zip(sizes, beats)):
        out[i] = _host_accumulate(terms[pos : pos + n])
        pos += nb * upb
    return out


def q8_0_dot(a: BlockQ8_0, b: BlockQ8_0, mapping: KernelMapping | None = None) -> np.float32:
    return q8_0_dot_many([(a, b)], mapping)[0]


def q3_k_dot_many(pairs, mapping: KernelMapping | None = None) -> np.ndarray:
    """Evaluate many independent Q3_K dots through one batched pipeline run."""
    mapping = _check_mapping(mapping, KernelTag.Q3_K)
    pairs = [(repack_q3_k(w) if isinstance(w, SuperblockQ3K) else w, a) for w, a in pairs]
    for w, a in pairs:
        if len(w) != len(a):
            raise ShapeError(f"superblock counts differ: {len(w)} vs {len(a)}")
    out = np.zeros(len(pairs), dtype=np.float32)
    if not pairs:
        return out
    wpu = _UNIT_WORDS[KernelTag.Q3_K]
    per_sb = QK_K // WORD_ELEMS // wpu
    upb = mapping.units_per_beat
    units = [len(w) * per_sb for w, _ in pairs]
    beats = _beat_rows(units, upb)
    ww, wa = [], []
    for (w, a), u, nb in zip(pairs, units, beats):
        ww.append(_pad_rows(w.words.reshape(u, wpu), nb * upb))
        wa.append(_pad_rows(isa.pack_i8_lanes(a.q.reshape(u, wpu, WORD_ELEMS)), nb * upb))
    outs = run_pipeline(
        mapping,
        {"stream:A": np.concatenate(ww).reshape(-1, upb * wpu), "stream:B": np.concatenate(wa).reshape(-1, upb * wpu)},
    )
    partials = np.stack(outs, axis=1).reshape(-1)
    pos = 0
    for i, ((w, a), u, nb) in enumerate(zip(pairs, units, beats)):
        part = partials[pos : pos + u].reshape(len(w), per_sb)
        pos += nb * upb
        if u == 0:
            continue
        # the per-superblock total of the quarter partials stays within 24 bits
        total = part[:, 0]
        for j in range(1, per_sb):
            total = isa.op_ad24(total, part[:, j])
        scale = isa.op_fmul32(w.d.astype(np.float32), a.d)
        out[i] = _host_accumulate(isa.op_fmul32(isa.int24_to_f32(total, 0), scale))
    return out


def q3_k_dot(w: RepackedQ3K, a: BlockQ8K, mapping: KernelMapping | None = None) -> np.float32:
    return q3_k_dot_many([(w, a)], mapping)[0]


# ---------------------------------------------------------------------------
# matrix drivers
# ---------------------------------------------------------------------------


def _activation_blocks(x, dtype: DType):
    if isinstance(x, QuantizedTensor):
        if x.dtype != dtype:
            raise ShapeError(f"activation dtype {x.dtype.name}, kernel needs {dtype.name}")
        return x.blocks
    return x


def matvec(w: QuantizedTensor, x, mapping: KernelMapping | None = None, lanes: int = 1) -> np.ndarray:
    """Row-parallel matrix-vector product; rows are dealt round-robin to ``lanes``."""
    if not 1 <= lanes <= MAX_LANES:
        raise ConfigError(f"lanes must be in [1, {MAX_LANES}]")
    if w.dtype == DType.Q8_0:
        dot, act = q8_0_dot, _activation_blocks(x, DType.Q8_0)
        weights = w
    elif w.dtype in (DType.Q3_K, DType.Q3_K_REPACKED):
        dot, act = q3_k_dot, _activation_blocks(x, DType.Q8_K)
        weights = w
        if w.dtype == DType.Q3_K:
            weights = QuantizedTensor(DType.Q3_K_REPACKED, w.rows, w.cols, repack_q3_k(w.blocks))
    else:
        raise ShapeError(f"no dot kernel for {w.dtype.name} weights")
    if len(act) != w.blocks_per_row:
        raise ShapeError(f"activation has {len(act)} blocks, rows have {w.blocks_per_row}")
    out = np.zeros(w.rows, dtype=np.float32)
    for lane in range(lanes):
        for i in range(lane, w.rows, lanes):
            out[i] = dot(weights.row(i), act, mapping)
    return out


def matmul(w: QuantizedTensor, xs, mapping: KernelMapping | None = None, lanes: int = 1) -> np.ndarray:
    """Apply :func:`matvec` to each activation vector; returns (len(xs), rows)."""
    return np.stack([matvec(w, x, mapping, lanes) for x in xs]) if len(xs) else np.zeros((0, w.rows), np.float32)
