"""Multi-modal featurization, fusion models and screening for porous frameworks."""

__version__ = "0.1.0"
