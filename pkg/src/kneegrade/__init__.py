"""Knee-OA severity toolkit.

Subpackages and modules:

- ``imaging``   grayscale raster primitives (load/save, equalize, resample,
                Sobel gradients, patch geometry)
- ``detect``    knee-joint center detection (template matching, gradient SVM)
                and Jaccard-based evaluation
- ``svm``       in-house linear SVM (hinge loss, Pegasos-style solver,
                one-vs-rest grading)
- ``minicnn``   minimal CNN engine with named feature taps and per-layer
                learning-rate fine-tuning
- ``metrics``   ordinal and categorical evaluation (MSE, confusion matrices,
                precision/recall/F1)
- ``pipeline``  dataset handling, synthetic corpus generation, experiment
                orchestration, CLI, annotation HTTP service

Hot numeric kernels live in ``_kernels`` and are JIT-compiled with numba by
default; set ``KNEEGRADE_NUMBA=0`` to force the pure-numpy fallbacks.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DecodeError, KneegradeError

__all__ = ["KneegradeError", "DataError", "DecodeError", "ConfigError", "__version__"]
