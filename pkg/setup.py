import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

np_inc = np.get_include()
np_random_lib = os.path.abspath(os.path.join(np_inc, "..", "..", "random", "lib"))
np_math_lib = os.path.abspath(os.path.join(np_inc, "..", "lib"))

extensions = [
    Extension(
        "molmimo._walk",
        ["src/molmimo/_walk.pyx"],
        include_dirs=[np_inc],
        library_dirs=[np_random_lib, np_math_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no FMA contraction: the numpy fallback must reproduce every rounding
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

if os.environ.get("MOLMIMO_NO_EXT"):
    extensions = []

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
