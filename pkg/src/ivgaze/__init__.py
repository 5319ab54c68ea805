"""In-vehicle gaze estimation toolkit: calibration, labelling, normalization,
tri-plane projection, a toy dual-stream model and evaluation metrics."""

__version__ = "0.1.0"
