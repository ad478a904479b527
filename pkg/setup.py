"""Build hook: compile the optional kernel extension when possible.

The package is fully functional without the extension (a numpy fallback
is selected at import); the build therefore tolerates a missing compiler
or Cython.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "tapercal._kernels._cyext",
                ["src/tapercal/_kernels/_cyext.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
