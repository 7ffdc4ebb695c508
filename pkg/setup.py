"""Build script for the compiled ILU(k) kernels.

The extension is optional: when it cannot be compiled the package falls
back to the pure-Python kernels in ``crhybrid.solvers._ilu_py``.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("CRHYBRID_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "crhybrid.solvers._ilu_core",
                ["src/crhybrid/solvers/_ilu_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
