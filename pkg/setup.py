import numpy as np
from setuptools import Extension, setup

# The compiled core is optional: if Cython or a C compiler is missing the
# install still succeeds and rnsfde.backend falls back to the pure-python
# kernels (same results, slower).
ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rnsfde._core",
                ["src/rnsfde/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    import warnings

    warnings.warn(f"building without compiled core ({exc!r}); pure-python fallback will be used")

setup(ext_modules=ext_modules)
