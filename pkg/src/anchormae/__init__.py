"""Anchor-aware masked-autoencoder pretraining on synthetic multi-source image sets."""

__version__ = "0.1.0"

from . import config, data, geo, imageset, masking, model, numerics, pruning, raster, trainer

__all__ = ["config", "data", "geo", "imageset", "masking", "model", "numerics",
           "pruning", "raster", "trainer", "__version__"]
