"""Build script: compiles the optional fast linearization kernel.

The package works without the extension (a pure-numpy twin is selected at
import time), so any failure here is downgraded to a warning instead of
aborting the install.
"""

import os
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that tolerates a missing compiler / failed cythonization."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            warnings.warn(
                "building the compiled kernel failed (%s); "
                "falling back to the pure-python backend" % (exc,)
            )

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            warnings.warn(
                "building %s failed (%s); the pure-python backend will be used"
                % (ext.name, exc)
            )


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build-time only
        return []
    if not os.path.exists("src/imu2seg/_fastkern.pyx"):
        return []
    ext = Extension(
        "imu2seg._fastkern",
        ["src/imu2seg/_fastkern.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
