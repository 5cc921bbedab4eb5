import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "heapsae._kernels",
        ["src/heapsae/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# The package works without the extension (a numpy fallback is selected at
# import time), so a missing Cython toolchain is not fatal.
setup(
    ext_modules=cythonize(extensions, language_level=3) if cythonize else [],
)
