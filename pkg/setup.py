import numpy  # noqa: F401  (build requirement)
from Cython.Build import cythonize
from setuptools import Extension, setup

setup(
    ext_modules=cythonize(
        [Extension("levybellman._core", ["src/levybellman/_core.pyx"], extra_compile_args=["-O3"])],
        language_level=3,
    ),
)
