"""Low-rank thermal embedding, thermomics and Block HSIC Lasso selection for thermography."""

__version__ = "0.1.0"
