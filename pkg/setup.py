"""Build script for the optional compiled kernel core.

The package works without the extension (numpy fallback is selected at
import time); building it just makes the hot loops faster.
"""

import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "trivit.backend.kernels_cy",
                ["src/trivit/backend/kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"trivit: skipping compiled kernels ({exc}); numpy fallback will be used\n")
    extensions = []

setup(ext_modules=extensions)
