import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: mlk.kernels falls back to the pure
# numpy implementation when the extension is absent.
extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "mlk._ckernels",
                ["src/mlk/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=extensions)
