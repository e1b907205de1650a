"""synthcut: manufacture pseudo-labeled detection/segmentation datasets.

The pipeline verbalizes class names into prompts for a text-to-image
service, filters the generations with image-text similarity scores,
extracts foreground cutouts, and pastes them onto generated backgrounds
to produce COCO-style training data with exact instance masks.
"""

__version__ = "0.1.0"

from .errors import SynthcutError
from .prompting import ClassLabel, EditRule, apply_edit_rules

__all__ = [
    "__version__",
    "SynthcutError",
    "ClassLabel",
    "EditRule",
    "apply_edit_rules",
]
