"""Build script for the optional compiled kernel.

The package works without the extension (a pure Python twin is selected at
import time), so a failed compile downgrades to a warning instead of aborting
the install.
"""
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernel skipped ({exc}); pure Python fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: building {ext.name} failed ({exc}); pure Python fallback will be used")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    # -ffp-contract=off: no FMA fusion, so float results match the pure
    # Python twin bit for bit
    ext = Extension(
        "heteroplan._core._kernels",
        sources=["src/heteroplan/_core/_kernels.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
