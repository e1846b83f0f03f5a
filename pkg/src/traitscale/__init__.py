"""Leaf-trait upscaling pipeline: gap filling, land-cover downscaling, CWM
construction and trait regression from remote sensing and climate."""

__version__ = "0.1.0"
