"""Coupled HDR/LDR panorama GAN: lighting estimation, editing, evaluation."""

from .panorama import (
    CameraSpec,
    MaskSet,
    ToneMapParams,
    compute_alpha,
    focal_mask,
    inverse_tonemap,
    lfov_to_masked_pano,
    phi,
    psi,
    tonemap,
)
from .hdr_io import HdrFormatError, load_hdr, save_hdr
from .models import GeneratorConfig, ModelCheckpoint, sample
from .inversion import HyperParams, InversionResult, estimate_lighting
from .editing import EditSpec, add_light, edit_lighting, remove_light
from .spheres import MetricsReport, SphereRenderSpec, evaluate, render_sphere

__version__ = "0.1.0"
