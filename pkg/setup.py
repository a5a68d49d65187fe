import os
import sys

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback only
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("MSTSPLAT_NO_EXT"):
    openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
    extensions = [
        Extension(
            "mstsplat.raster._kernels",
            ["src/mstsplat/raster/_kernels.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={
        "language_level": "3",
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "initializedcheck": False,
    })

setup(ext_modules=ext_modules)
