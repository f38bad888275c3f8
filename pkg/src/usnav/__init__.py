"""Ultrasound-only surgical navigation engine.

Reconstructs a 3D tumor/vessel model from tracked 2D ultrasound frames,
tracks instruments relative to an organ-mounted reference sensor, streams
live distance-to-tumor guidance, and quantifies navigation accuracy with a
clip-to-specimen protocol — all runnable at desk scale against synthetic
phantoms.
"""

__version__ = "0.1.0"
