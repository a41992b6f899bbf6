"""prtex: CPU pipeline for radiance-transfer textures.

Bakes visibility-times-cosine transfer into UV-space textures, bakes
one-bounce inter-reflection textures, and renders glossy scenes with the
spherical-harmonic triple product (TP) or the fixed-light product matrix
(TPFL), validated against Monte Carlo references.
"""

__version__ = "0.1.0"
