"""Shift-merge steganography codec over token distributions."""

import json

from ._shimer import (
    Channel,
    ShimerError,
    decode,
    encode,
    entropy,
    expected_embedding_no_reorder,
    keygen,
    split_bound_general,
    split_bound_high,
)
from ._shimer import run_benchmark as _run_benchmark

__all__ = [
    "Channel",
    "ShimerError",
    "benchmark",
    "decode",
    "encode",
    "entropy",
    "expected_embedding_no_reorder",
    "keygen",
    "split_bound_general",
    "split_bound_high",
]


def benchmark(channel, **options):
    """Runs the benchmark harness; returns the metrics record as a dict."""
    if isinstance(channel, str):
        channel = Channel(channel)
    return json.loads(_run_benchmark(channel, **options))
