"""Human3.6M to MOTB exporter.

Turns the widely mirrored exponential-map text release of Human3.6M into
MOTB motion clips: forward kinematics over the 32-joint skeleton, a
configurable 22-joint subset, 50 -> 25 fps frame dropping, and the
standard subject split (S5 test, S11 validation, remainder train).  Ships
an independent structural validator for the produced files.
"""

__version__ = "0.1.0"
