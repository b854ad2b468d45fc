"""pastekit: Copy-Paste dataset synthesis and detection evaluation toolkit.

Builds crowded, fully annotated object-detection datasets out of
single-object images plus their segmentation masks, and scores detector
predictions with the matching evaluation metrics (per-class AP, false
positives on negative images, confusion matrices).
"""

from pastekit import augment, composer, corekit, evalkit, maskannot

__version__ = "0.1.0"

__all__ = ["augment", "composer", "corekit", "evalkit", "maskannot", "__version__"]
