"""Build script for the optional compiled kernel backend.

The package is pure python plus one Cython extension, edict._kernels._ckern.
The extension is a performance backend only: if Cython or a C compiler is
missing the build falls back to a pure-python install and the kernel loader
selects the numpy implementation at import time.

The extension is compiled with -ffp-contract=off and without -ffast-math on
purpose.  The samplers' inversion guarantees depend on strict IEEE-754
rounding, and fused multiply-adds would make the compiled backend round
differently from the numpy one.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "edict._kernels._ckern",
                sources=["src/edict/_kernels/_ckern.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
