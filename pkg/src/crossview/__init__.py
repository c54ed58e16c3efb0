"""Cross-view transformers for unregistered dual-view images.

A numpy reverse-mode autodiff engine, convolutional backbones, cross-view
attention over pixels or visual tokens, a synthetic dual-view correspondence
task and a reproducible training harness.
"""

from .config import RunConfig, load_config
from .models import Model, ModelSpec, build
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["Model", "ModelSpec", "RunConfig", "Tensor", "build", "load_config", "__version__"]
