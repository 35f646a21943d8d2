"""Two-stage volumetric glioma segmentation with attention U-Nets and
energy-based voxel confidence, built on a small numpy autodiff engine."""

import os as _os

# Must run before numpy is first imported anywhere in this process for the
# BLAS thread caps to take effect.
_threads = _os.environ.get("GLIOMASEG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from . import errors  # noqa: E402
from .volume import Volume, MultiModalCase, DatasetManifest, zscore_normalize, load_case  # noqa: E402
from .autodiff import Tensor, Parameter, ParamSet, backward  # noqa: E402

__all__ = [
    "errors",
    "Volume",
    "MultiModalCase",
    "DatasetManifest",
    "zscore_normalize",
    "load_case",
    "Tensor",
    "Parameter",
    "ParamSet",
    "backward",
]

__version__ = "0.1.0"
