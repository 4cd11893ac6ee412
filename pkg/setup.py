import os

from setuptools import setup

ext_modules = []
if os.environ.get("CORRDISTILL_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "corrdistill._kernels",
                    ["src/corrdistill/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps results bit-identical to the numpy fallback
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
