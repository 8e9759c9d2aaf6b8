"""Video saliency prediction with multi-scale deformable alignment and a bidirectional ConvLSTM."""

__version__ = "0.1.0"
