from pathlib import Path
from setuptools import setup, find_packages

README = (Path(__file__).parent / "README.md").read_text(encoding="utf-8")

setup(
    name="cfm-lab",
    version="0.1.0",
    description="Conditional flow matching experiments: couplings, probability paths, training and OT metrics",
    long_description=README,
    long_description_content_type="text/markdown",
    packages=find_packages(include=("cfmlab", "cfmlab.*")),
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.9",
        "pygame>=2.5.0",
        'tomli>=1.1; python_version < "3.11"',
    ],
    extras_require={
        "test": ["pytest>=7"],
    },
    entry_points={
        "console_scripts": [
            "cfmlab=cfmlab.cli:main",
        ]
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3 :: Only",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
