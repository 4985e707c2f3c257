from setuptools import find_packages, setup

with open("README.md", "r") as f:
    long_description = f.read()

with open("requirements.txt", "r") as f:
    requirements = [r for r in f.read().splitlines() if r and not r.startswith("#")]

setup(
    name="shiftkrylov",
    version="0.1.0",
    description="Shifted GMRES and shifted recycled GMRES for families of shifted linear systems",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={
        "shiftkrylov": [
            "../requirements.txt",
            "utils/config.yaml",
        ]
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "shiftkrylov = shiftkrylov.run:run",
        ],
    },
)
