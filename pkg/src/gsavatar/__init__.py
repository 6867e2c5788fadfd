"""Desk-scale Gaussian-splatting avatar pipeline.

Subpackages/modules:
  core      domain types (Gaussian models, cameras, images) and residual algebra
  render    differentiable splat renderer (forward, analytic backward, oracle)
  metrics   PSNR / SSIM / MAE and the perceptual proxy
  losses    decoder and encoder training objectives
  optim     Adam and generic training-loop scaffolding
  fitting   landmark-anchored initialization and per-subject fitting
  template  parameter-wise template averaging
  decoder   latent-conditioned residual decoder (stage 1)
  encoder   pose-invariant image encoder (stage 2)
  editing   test-time refinement, interpolation, attribute traversal
  synth     procedural multi-view dataset generator
  cli       command-line pipeline driver
  service   HTTP API over trained artifacts
"""

__version__ = "0.1.0"

from gsavatar.core.errors import ValidationError

__all__ = ["ValidationError", "__version__"]
