"""Build script: compiles the Cython convolution kernels when a toolchain is
available. The package works without them (numpy fallback is selected at
import time), so extension build failures are non-fatal."""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "adlraw.engine._convkernels",
                ["src/adlraw/engine/_convkernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # no Cython / no compiler: install pure-python
    print(f"adlraw: skipping compiled kernels ({exc!r}); numpy fallback will be used")
    extensions = []

setup(ext_modules=extensions)
