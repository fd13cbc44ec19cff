"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time); building it just makes the recurrent-step kernels faster.
"""

import numpy
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "trajcast.kernels._ckernels",
                ["src/trajcast/kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
