"""
Setuptools build script for etfscore.

This file allows installation of the ``etfscore`` package via
``pip install .``.  It declares the required dependencies and
registers a console script entry point named ``etfscore``.  The
bundled default configuration and ETF universe tables are shipped as
package data.

See ``readme.md`` for usage.
"""

from setuptools import setup, find_packages

setup(
    name="etfscore",
    version="0.1.0",
    description="ETF scoring from holdings with a financial-statement stock classifier, plus top-K backtests",
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.8",
    install_requires=[
        "click>=8.0",
        "PyYAML>=5.4",
        "numpy>=1.20",
        "pandas>=1.5",
        "scikit-learn>=1.0",
    ],
    extras_require={
        "test": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": [
            "etfscore=etfscore.cli:main",
        ],
    },
    include_package_data=True,
    package_data={"etfscore": ["data/*.yaml", "data/*.csv"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
