"""Build the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import time);
building it just makes the conv/pool hot path faster.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "metaquill._kernels._ckernels",
        ["src/metaquill/_kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
