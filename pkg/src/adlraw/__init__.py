"""Cross-domain RAW denoising on synthetic sensor fleets.

Subpackages: ``engine`` (tensor autodiff + optimizers), ``sensorsim``
(synthetic fleet data), ``modnet`` (the modulated denoiser), ``adl``
(adaptive training), ``metrics`` (PSNR/SSIM), ``harness`` (CLI and
experiments).
"""

__version__ = "0.1.0"
