from os import path

from setuptools import find_packages, setup

import dsac

this_directory = path.abspath(path.dirname(__file__))
with open(path.join(this_directory, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="dsac",
    version=dsac.__version__,
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    package_data={"dsac": ["dsac.cfg"]},
    author="dsac contributors",
    description="Capability-based access control for NGSI-LD data spaces",
    long_description=long_description,
    long_description_content_type="text/markdown",
    install_requires=[
        "docopt-ng",
        "termcolor",
        "requests",
        "tqdm",
        "filelock>=3.0.0",
        "cryptography>=41.0",
        "fastapi>=0.100",
        "pydantic>=2.0",
        "uvicorn>=0.22",
    ],
    extras_require={
        "dev": [
            "pytest",
            "pytest-cov",
            "httpx",
            "ruff",
            "mypy",
            "types-requests",
            "types-tqdm",
        ],
    },
    classifiers=[
        "Programming Language :: Python",
        "Development Status :: 4 - Beta",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Internet :: WWW/HTTP :: HTTP Servers",
        "Topic :: Security",
    ],
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "dsac = dsac.dsac:main",
        ],
    },
)
