"""Build the optional compiled kernels.

The Cython extension is skipped when Cython or a compiler is unavailable;
``semlang.kernels`` then falls back to the pure-Python implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SEMLANG_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "semlang._ckernels",
                    ["src/semlang/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
