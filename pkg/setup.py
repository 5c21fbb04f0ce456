import os

from setuptools import setup

# The compiled kernels are optional: the package falls back to the numpy
# implementations in bpjdet.kernels.fallback when the extension is absent.
# Set BPJDET_SKIP_EXT=1 to force a pure-Python install.


def get_extensions():
    if os.environ.get("BPJDET_SKIP_EXT", "0") == "1":
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError:
        return []
    ext = Extension(
        "bpjdet.kernels._core",
        sources=["src/bpjdet/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=get_extensions())
