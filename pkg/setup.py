import os

import numpy as np
from setuptools import Extension, setup

# the pure-Python fallback is used when the extension cannot be built
ext_modules = []
if os.environ.get("MOCLQR_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("moclqr.qp._kernel", ["src/moclqr/qp/_kernel.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
