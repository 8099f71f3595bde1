"""Low-light image enhancement with hierarchy-sorted state-space blocks.

The package is self-contained: its own tape-based autodiff engine
(tensor.py), selective-scan core (ssm.py), brightness/semantic token
ordering (hierarchy.py), the four-block backbone (backbone.py), the FFC
detail-enhancement net (denet.py), losses and metrics (losses.py), and a
train/enhance/eval pipeline with CLI (pipeline.py, cli.py).
"""

from . import errors
from .tensor import Tensor, no_grad, set_default_dtype

__all__ = ["Tensor", "no_grad", "set_default_dtype", "errors"]
__version__ = "0.1.0"
