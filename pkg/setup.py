"""Build script for the optional compiled simulation kernel.

The package is fully functional without the extension (a pure NumPy
fallback is selected at import time), so a missing Cython or a failing
compile only costs speed, not features.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("STANDINGSIM_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    lib_dir = os.path.join(os.path.dirname(numpy.random.__file__), "lib")
    ext = Extension(
        "standingsim._sim_kernel",
        sources=["src/standingsim/_sim_kernel.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[lib_dir],
        libraries=["npyrandom", "m"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions())
