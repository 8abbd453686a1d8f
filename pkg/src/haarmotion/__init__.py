"""Multi-resolution spectral network for 3D human motion prediction.

Modules: transforms (DCT + Haar zooms), autodiff (reverse-mode engine),
model (network, checkpoints), training (loss, Adam, schedule, loop),
datametrics (clip format, synthetic data, MPJPE evaluation), cli.
"""

__version__ = "0.1.0"
