"""Build script. The compiled kernels are optional: when Cython or a C
compiler is missing the install still succeeds and the package falls back
to the pure numpy kernels at import time."""

import warnings

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "coffar.kernels._convcore",
            ["src/coffar/kernels/_convcore.pyx"],
            # -ffp-contract=off keeps the C loops from fusing multiply-add,
            # so both kernel backends round identically.
            extra_compile_args=["-O3", "-ffp-contract=off"],
            optional=True,
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except ImportError:
    warnings.warn("Cython not available, installing without compiled kernels")

setup(ext_modules=ext_modules)
