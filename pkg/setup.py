# Builds the optional C transform kernel.  If Cython (or a C compiler) is
# missing the build falls through to the pure NumPy path selected at import.
from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/chrestenson/_fct_kernel.pyx"],
        language_level=3,
    )
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
