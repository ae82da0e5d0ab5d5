"""Build script for the optional compiled kernel core.

The package works without the extension: sidenet.kernels falls back to
numpy implementations when the compiled module is missing. Set
SIDENET_SKIP_NATIVE=1 to skip the build entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SIDENET_SKIP_NATIVE") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "sidenet.kernels._native",
            ["src/sidenet/kernels/_native.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
