"""Layered generative face video coding: an ultra-low-rate keypoint base layer
with scalable auxiliary-feature enhancement layers."""

__version__ = "0.1.0"
