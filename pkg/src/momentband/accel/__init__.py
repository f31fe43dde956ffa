"""Backend selection for the hot kernels.

The kernels in ``_kernels`` are written once in the numba-compatible numpy
subset. By default they are JIT-compiled with numba; set the environment
variable ``MOMENTBAND_BACKEND=numpy`` to run the plain numpy/Python versions
instead (set it to ``numba`` to make a missing numba an error rather than a
silent fallback). ``benchmarks/compare_backends.py`` times the two paths.
"""

import os
import warnings

from . import _kernels as _k

_PUBLIC = (
    "grow_tree",
    "route_points",
    "tree_forest_solve",
    "tree_forest_predict",
    "tree_forest_weights_at",
    "tree_forest_shrinkage",
    "knn_forest_solve",
    "knn_forest_predict",
    "knn_forest_weights_at",
    "knn_forest_shrinkage",
)

_requested = os.environ.get("MOMENTBAND_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"MOMENTBAND_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numpy"
if _requested != "numpy":
    try:
        from numba import njit

        # jit the helpers first so calls from the public kernels resolve to
        # compiled versions when those compile lazily
        _k._sup_dist = njit(cache=True)(_k._sup_dist)
        _k._route = njit(cache=True)(_k._route)
        _k._knn_select = njit(cache=True)(_k._knn_select)
        for _name in _PUBLIC:
            setattr(_k, _name, njit(cache=True)(getattr(_k, _name)))
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        warnings.warn("numba not available; using the pure-numpy kernel backend")

grow_tree = _k.grow_tree
route_points = _k.route_points
tree_forest_solve = _k.tree_forest_solve
tree_forest_predict = _k.tree_forest_predict
tree_forest_weights_at = _k.tree_forest_weights_at
tree_forest_shrinkage = _k.tree_forest_shrinkage
knn_forest_solve = _k.knn_forest_solve
knn_forest_predict = _k.knn_forest_predict
knn_forest_weights_at = _k.knn_forest_weights_at
knn_forest_shrinkage = _k.knn_forest_shrinkage
