"""Reference sidecar serving the model-gateway wire protocol over HTTP.

Three endpoints, JSON bodies, images as base64 PNG:

    POST /v1/generate  {"prompt", "n", "seed", "width", "height"} -> {"images": [...]}
    POST /v1/score     {"image", "texts"}                          -> {"scores": [...]}
    POST /v1/caption   {"image", "n"}                              -> {"captions": [...]}

Model choice is configuration, not code: the "toy" backend set is
procedural and dependency-free (protocol testing, offline runs); the
"hf" backends load real checkpoints (a diffusion pipeline, an image-text
embedder, a captioner) when the optional model stack is installed.
"""

__version__ = "0.1.0"

from .config import SidecarConfig

__all__ = ["SidecarConfig", "__version__"]
