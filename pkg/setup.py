#
# Copyright (c) 2025 The cpbert Authors.
#
# Licensed to the Apache Software Foundation (ASF) under one
# or more contributor license agreements.  See the NOTICE file
# distributed with this work for additional information
# regarding copyright ownership.  The ASF licenses this file
# to you under the Apache License, Version 2.0 (the
# "License"); you may not use this file except in compliance
# with the License.  You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing,
# software distributed under the License is distributed on an
# "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, either express or implied.  See the License for the
# specific language governing permissions and limitations
# under the License.
#
from setuptools import setup, find_packages

def get_long_desc():
    with open("README.md", "r") as readme:
        desc = readme.read()

    return desc

def setup_package():
    setup(
        name='cpbert',
        version='0.1.0',
        description='Pre-training and fine-tuning toolkit for symbolic music encoders',
        long_description=get_long_desc(),
        long_description_content_type="text/markdown",
        license='Apache Software License',
        packages=find_packages(exclude=["cpbert.tests"]),
        python_requires='>=3.8',
        install_requires=[
            'mido>=1.2.10',
            'numpy>=1.22',
            'scikit-learn>=1.1',
            'torch>=2.0',
        ],
        tests_require=['mock'],
        extras_require={
            'test': ['mock'],
        },
        entry_points = {
            'console_scripts': [
                'cpbert=cpbert.__main__:main',
            ],
        },
        classifiers=[
            'License :: OSI Approved :: Apache Software License',
            'Programming Language :: Python :: 3'
        ],
        author = 'The cpbert Authors',
    )

if __name__ == '__main__':
    setup_package()
