from setuptools import setup


def requirements(filename="requirements.txt"):
    with open(filename) as f:
        return [x.strip() for x in f.readlines() if x.strip()]


setup(
    install_requires=requirements("requirements.txt"),
    extras_require={
        "test": requirements("requirements-test.txt"),
        "docs": requirements("requirements-docs.txt"),
    },
    license="MIT License",
)
