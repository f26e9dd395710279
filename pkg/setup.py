import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The image-source kernel is optional at runtime: refsep.acoustics falls back
# to the numpy implementation when the compiled module is missing.
extensions = [
    Extension(
        "refsep._imgsrc",
        sources=["src/refsep/_imgsrc.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
)
