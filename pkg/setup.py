import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DPVLEARN_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # build without the compiled core
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "dpvlearn._kernels",
                    ["src/dpvlearn/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
