"""faceverify: identity verification at desk scale.

Landmark-based face alignment, a compact from-scratch convolutional
feature extractor, joint Bayesian metric learning with large-margin
updates, template pooling, and ROC/CMC evaluation protocols.
"""

__version__ = "0.1.0"
