import os

from setuptools import Extension, setup

# The compiled kernel core is optional: when Cython or a C toolchain is
# missing the package installs anyway and falls back to the pure-Python
# kernels at import time.  Set PTZKIT_SKIP_BUILD_EXT=1 to force that.
ext_modules = []
if os.environ.get("PTZKIT_SKIP_BUILD_EXT", "") not in ("1", "true", "yes"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ptzkit._kernels._core",
                    ["src/ptzkit/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
