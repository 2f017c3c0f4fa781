"""Build script: compiles the optional Cython block-parsing kernel.

The package works without the extension (a pure-Python kernel is selected
at import time), so any build failure here is non-fatal for development
installs done with --no-build-isolation on machines without a compiler.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("ledgerguard._codec", ["src/ledgerguard/_codec.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
