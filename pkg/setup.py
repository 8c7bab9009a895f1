import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: the numpy fallback must match the compiled kernels
# bitwise, so FMA contraction is disabled.
extra_compile_args = ["-O3", "-ffp-contract=off", "-fno-fast-math"]

extensions = [
    Extension(
        "riskdrift._kernels",
        ["src/riskdrift/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=extra_compile_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False},
    ),
)
