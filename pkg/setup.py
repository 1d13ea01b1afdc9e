import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy fallback is used
    cythonize = None

openmp = os.environ.get("SORNET_OPENMP", "1") != "0"
compile_args = ["-O3", "-march=native"] + (["-fopenmp"] if openmp else [])
link_args = ["-fopenmp"] if openmp else []

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "sornet._kernels",
                ["src/sornet/_kernels.pyx"],
                depends=["src/sornet/_conv_tile.h"],
                include_dirs=[np.get_include(), "src/sornet"],
                extra_compile_args=compile_args,
                extra_link_args=link_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
