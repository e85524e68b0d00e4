import os

import numpy as np
from setuptools import Extension, setup

# ICPLAB_NO_EXT=1 installs without the compiled kernels; the numpy
# fallback is then selected at import time.
if os.environ.get("ICPLAB_NO_EXT"):
    ext_modules = []
else:
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "icplab._kernels",
            ["src/icplab/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-march=native"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
