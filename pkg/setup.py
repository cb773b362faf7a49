"""Build script: compiles the optional Cython kernel extension.

Set FDSLAB_NO_EXT=1 to skip compilation; the package falls back to the
pure-numpy kernels at import time.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FDSLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "fdslab._kernels",
                    ["src/fdslab/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
