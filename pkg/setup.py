import os

import numpy as np
from setuptools import Extension, setup


def _extensions():
    # PULSEMAP_NO_EXT=1 installs the pure-Python package only.
    if os.environ.get("PULSEMAP_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "pulsemap._kernels",
        ["src/pulsemap/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: the f64 path must keep IEEE summation order
        extra_compile_args=["-O3", "-fopenmp", "-ffp-contract=off"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
