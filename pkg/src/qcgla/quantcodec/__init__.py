from qcgla.quantcodec.blocks import (
    BLOCK_Q3_K_BYTES,
    BLOCK_Q3_K_REPACKED_BYTES,
    BLOCK_Q8_0_BYTES,
    BLOCK_Q8_K_BYTES,
    QK8_0,
    QK_K,
    BlockQ8_0,
    BlockQ8K,
    RepackedQ3K,
    SuperblockQ3K,
    dequantize_q3_k,
    dequantize_q8_0,
    dequantize_q8_k,
    pack_q3_k,
    pack_q3_k_repacked,
    pack_q8_0,
    pack_q8_k,
    quantize_q3_k,
    quantize_q8_0,
    quantize_q8_k,
    repack_q3_k,
    repack_scale,
    round_away,
    unpack_q3_k,
    unpack_q3_k_repacked,
    unpack_q8_0,
    unpack_q8_k,
    unrepack_codes,
)
from qcgla.quantcodec.reference import ref_dot_q3_k, ref_dot_q3_k_repacked, ref_dot_q8_0
from qcgla.quantcodec.tensorfile import (
    DType,
    QuantizedTensor,
    quantize_tensor,
    read_tensor,
    write_tensor,
)

__all__ = [
    "BLOCK_Q3_K_BYTES",
    "BLOCK_Q3_K_REPACKED_BYTES",
    "BLOCK_Q8_0_BYTES",
    "BLOCK_Q8_K_BYTES",
    "QK8_0",
    "QK_K",
    "BlockQ8_0",
    "BlockQ8K",
    "DType",
    "QuantizedTensor",
    "RepackedQ3K",
    "SuperblockQ3K",
    "dequantize_q3_k",
    "dequantize_q8_0",
    "dequantize_q8_k",
    "pack_q3_k",
    "pack_q3_k_repacked",
    "pack_q8_0",
    "pack_q8_k",
    "quantize_q3_k",
    "quantize_q8_0",
    "quantize_q8_k",
    "quantize_tensor",
    "read_tensor",
    "ref_dot_q3_k",
    "ref_dot_q3_k_repacked",
    "ref_dot_q8_0",
    "repack_q3_k",
    "repack_scale",
    "round_away",
    "unpack_q3_k",
    "unpack_q3_k_repacked",
    "unpack_q8_0",
    "unpack_q8_k",
    "unrepack_codes",
    "write_tensor",
]
