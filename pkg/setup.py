import importlib.util
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None
# the extension takes its BLAS declarations from scipy
if importlib.util.find_spec("scipy") is None:
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("TAGCN_NO_EXT") != "1":
    ext = Extension(
        "tagcn._kernels._ckernels",
        ["src/tagcn/_kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
