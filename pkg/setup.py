"""Builds the optional compiled run-length kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so the extension is marked optional: a missing compiler
degrades to the pure-Python kernels instead of failing the install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "capdet.masks._kernels",
                ["src/capdet/masks/_kernels.pyx"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
