"""Bit-division lossless volume codec."""

from ._bitsplit import (
    DecodeError,
    FormatError,
    Model,
    Unsupported,
    b_from_angle,
    decode,
    encode,
    generate,
    inspect,
    merge,
    pmf_bench,
    split,
    total_steps,
)

__all__ = [
    "DecodeError",
    "FormatError",
    "Model",
    "Unsupported",
    "b_from_angle",
    "decode",
    "encode",
    "generate",
    "inspect",
    "merge",
    "pmf_bench",
    "split",
    "total_steps",
]
