"""Plane-wave coherent compounding and displacement compounding for 2D vascular strain imaging."""

import os

# Prefer OpenMP: it tolerates parallel kernels launched from several threads.
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

__version__ = "0.1.0"
