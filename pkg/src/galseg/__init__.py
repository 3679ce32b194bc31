"""Graph attention layer (GAL) for dense feature maps and a pothole segmentation harness."""

__version__ = "0.1.0"
