"""Build script for the optional compiled watershed kernel.

The package is pure Python unless Cython and a C toolchain are available,
in which case ``cellseg.postprocess._flood`` is compiled for speed.  The
pure-Python fallback implements the same algorithm and is selected
automatically at import time when the extension is missing.
"""

from setuptools import Extension, setup


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "cellseg.postprocess._flood",
        sources=["src/cellseg/postprocess/_flood.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(ext, language_level="3")


setup(ext_modules=extensions())
