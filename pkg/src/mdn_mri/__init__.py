"""Multi-scale dilated residual network for compressed-sensing MRI reconstruction."""

__version__ = "0.1.0"
