"""Build the optional Cython row kernels.

The package works without them (numpy fallback), so a failed compile is
reported and skipped rather than aborting the install. Set
CRMLAB_NO_NATIVE=1 to build without -march=native.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc}); using numpy fallback", file=sys.stderr)


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    flags = ["-O3", "-ffast-math"]
    link = []
    if os.environ.get("CRMLAB_NO_NATIVE") != "1":
        flags.append("-march=native")
    if sys.platform.startswith("linux"):
        # glibc vector math, used when gcc vectorizes exp/log
        link.append("-lmvec")
    ext = Extension(
        "crmlab._kernels",
        ["src/crmlab/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=flags,
        extra_link_args=link,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
