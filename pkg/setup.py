"""Builds the optional compiled kernels; the package works without them."""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "gatecnn.kernels._ckernels",
        ["src/gatecnn/kernels/_ckernels.pyx"],
        # no FMA contraction: float results must match the numpy fallback bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    try:
        return cythonize([ext], compiler_directives={"language_level": "3"})
    except Exception as exc:  # noqa: BLE001
        print(f"warning: cythonize failed ({exc}); using numpy fallback")
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
