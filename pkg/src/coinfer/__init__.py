"""Planning and analysis toolkit for quantization-aware co-inference."""

__version__ = "0.1.0"
