"""Mixup and MixAugment training for small expression-recognition CNNs, in numpy."""

__version__ = "0.1.0"
