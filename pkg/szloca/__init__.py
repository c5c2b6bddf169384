"""
szloca: world positions of people from a single fixed camera.

2D detections are lifted onto the ground through the camera model, tracked
with stable identities and delivered as newline-delimited records or OSC
messages.
"""

__version__ = "0.1.0"
