"""rawsplat: 3D Gaussian splatting trained directly on Bayer raw sensor data.

The pipeline reconstructs scenes in linear HDR radiance space: raw mosaics are
denoised and demosaiced once, a differentiable CPU splatting renderer fits a
Gaussian cloud against the linear targets, and a small configurable ISP turns
HDR renders into display-ready LDR images (exposure, tone curve, synthetic
defocus, depth maps).
"""

__version__ = "0.1.0"
