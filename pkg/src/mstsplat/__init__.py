"""Textured planar surfels with screen-size driven two-level textures: rendering, fitting, evaluation."""

__version__ = "0.1.0"
