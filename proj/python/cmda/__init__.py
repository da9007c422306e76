"""Python face of the cmda pipeline: phantom generation, metrics, resampling
and the file-sequenced training stages. Arrays are numpy [nz, ny, nx]."""

try:
    from ._cmda import *  # installed layout: cmda/_cmda.so
    from ._cmda import __doc__ as _core_doc
except ImportError:
    from _cmda import *  # build-tree layout: _cmda.so on PYTHONPATH
    from _cmda import __doc__ as _core_doc

__all__ = [
    "Error",
    "FormatError",
    "UnsupportedError",
    "TruncationError",
    "ValidationError",
    "IoError",
    "GenerationError",
    "read_volume",
    "write_volume",
    "read_labels",
    "write_labels",
    "dsc",
    "assd",
    "evaluate_case",
    "lr_schedule",
    "resize_bicubic",
    "gen_case",
    "default_config",
    "canonical_config",
    "run_stage",
    "run_all",
    "predict_labels",
    "translate_volume",
]
