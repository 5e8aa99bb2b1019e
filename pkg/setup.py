# Copyright 2021-2024 Faculty Science Limited
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


import os
from setuptools import setup, find_packages


def load_readme():
    path = os.path.join(os.path.dirname(__file__), "README.rst")
    with open(path) as fp:
        content = fp.read()
    return content


setup(
    name="riskpde",
    description=(
        "Sample average approximation of risk-averse and reliability "
        "constrained control of a random-coefficient heat equation."
    ),
    long_description=load_readme(),
    author="Faculty",
    author_email="opensource@faculty.ai",
    license="Apache Software License",
    packages=find_packages(exclude=["tests", "tests.*"]),
    setup_requires=["setuptools_scm"],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.17",
        "scipy",
        "attrs",
        "marshmallow>=3.13,<4",
        "marshmallow_enum",
        "marshmallow-oneofschema>=3",
    ],
    entry_points={"console_scripts": ["riskpde=riskpde.cli:main"]},
)
