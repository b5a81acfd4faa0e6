"""Toolchain for building phonetically balanced, quality-assured TTS
recording datasets: script selection, batch-recording segmentation and
matching, audio validation, and an annotation workflow service."""

__version__ = "0.1.0"
