"""Unsupervised quality assessment for cardiac volume signals."""

from .traces import (
    DataError,
    DatasetSplit,
    NormStats,
    SamplingError,
    SignalTrace,
    TraceParseError,
    apply_norm,
    fit_norm,
    invert_norm,
    load_corpus,
    load_trace,
    save_trace,
    split_traces,
    write_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DatasetSplit",
    "NormStats",
    "SamplingError",
    "SignalTrace",
    "TraceParseError",
    "apply_norm",
    "fit_norm",
    "invert_norm",
    "load_corpus",
    "load_trace",
    "save_trace",
    "split_traces",
    "write_corpus",
    "__version__",
]
