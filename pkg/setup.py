"""Build the optional compiled query kernel.

The package works without the extension (a numpy fallback is selected at
import time); the extension exists because hard-label attacks issue millions
of single-input oracle queries and the per-call overhead dominates runtime.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "advtrace._kernels._core",
                ["src/advtrace/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
