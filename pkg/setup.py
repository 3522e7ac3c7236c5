import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("AMBULEARN_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; kernels fall back at import
        cythonize = None
    if cythonize is not None:
        import numpy

        ext_modules = cythonize(
            [
                Extension(
                    "ambulearn._kernels",
                    ["src/ambulearn/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
