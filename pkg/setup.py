import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("GSMOOTH_NO_EXT", "0") != "1":
   try:
      from Cython.Build import cythonize
      from setuptools import Extension

      ext_modules = cythonize(
         Extension(
            "gsmooth._kernels",
            ["src/gsmooth/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
         ),
         compiler_directives={"language_level": "3", "boundscheck": False,
                              "wraparound": False, "cdivision": True},
      )
   except ImportError:
      ext_modules = []

setup(ext_modules=ext_modules)
