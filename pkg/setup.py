"""Build script: compiles the Cython active-set kernel when possible.

The package works without the extension (a pure-numpy twin of the kernel
is selected at import time), so a failed compile is not fatal.
"""
import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/ringmpc/_core/active_set_cy.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
