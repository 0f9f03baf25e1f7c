"""Builds the optional n-gram counting extension.

The extension is a speedup only; the package falls back to the pure-Python
implementation if compilation is unavailable.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("capgan._ngram_cy", ["src/capgan/_ngram_cy.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
