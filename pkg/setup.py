#!/usr/bin/env python3
"""
Setup configuration for cvqkd-twin - CV-QKD real-local-oscillator digital twin
"""

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="cvqkd-twin",
    version="0.1.1",
    author="cvqkd-twin contributors",
    description="Digital twin of a real-local-oscillator CV-QKD link: waveform DSP, SNU calibration, "
                "parameter estimation and finite-size key rates",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "channel_estimator",
        "channel_model",
        "config_manager",
        "cvqkd_twin",
        "experiment_runner",
        "invariant_checks",
        "key_rate_engine",
        "lms_kernels",
        "qkd_errors",
        "run_logger",
        "rx_dsp",
        "signal_core",
        "snu_calibration",
        "tx_dsp",
        "waveform_io",
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "numba>=0.56",
    ],
    extras_require={
        "dev": ["pytest>=6.0", "pytest-cov>=2.10"],
    },
    entry_points={
        "console_scripts": [
            "cvqkd=cvqkd_twin:main",
        ],
    },
    keywords="cv-qkd quantum key distribution dsp heterodyne simulation key rate",
    zip_safe=False,
)
