from setuptools import Extension, setup

# The compiled stepper is optional: squidstore.kernels falls back to the
# numpy implementation when the extension is missing.
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "squidstore.kernels._propagate",
                ["src/squidstore/kernels/_propagate.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3, "embedsignature": True},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
