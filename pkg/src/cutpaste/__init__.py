"""Cut-paste synthesis and background-consistency training for binary lesion segmentation."""

__version__ = "0.1.0"
