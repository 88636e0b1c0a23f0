from setuptools import setup, Extension

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "scendecomp._kernels_c",
                ["src/scendecomp/_kernels_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython: the pure NumPy kernels are used at runtime.
    ext_modules = []

setup(ext_modules=ext_modules)
