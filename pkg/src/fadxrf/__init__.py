"""Fast automatic deconvolution of MA-XRF datacubes into element-line maps."""
