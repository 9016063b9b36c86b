from setuptools import setup

with open("README.md", "r") as f:
    long_description = f.read()

setup(
    name="proplab",
    version="0.1.0",
    description="Learning-model inference, prediction benchmarks and seeding simulations "
    "for community choice data",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="Licensed under the MIT license. See LICENSE file for details",
    packages=["proplab"],
    package_dir={"proplab": "proplab"},
    python_requires=">=3.8",
    install_requires=["numpy", "scipy", "joblib", "voluptuous"],
    entry_points={"console_scripts": ["proplab=proplab.cli:main"]},
)
