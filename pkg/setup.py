#
# GNU GENERAL PUBLIC LICENSE
# Version 3, 29 June 2007
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.

# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.
#

# Copyright (C) 2025 Kris Kirby


from setuptools import setup, find_packages
import os

# Utility function to read the README file for long description
def read(fname):
    with open(os.path.join(os.path.dirname(__file__), fname)) as fh:
        return fh.read()

setup(
    name='pyspatialctx',
    version='0.1.0',
    description='Spatial context engine: labeled point clouds, scene hypergraphs, '
                'layout planning and hypergraph-driven pose optimization.',
    long_description=read('README.md'),
    long_description_content_type='text/markdown',
    author='Kris Kirby',

    packages=find_packages(include=['pyspatialctx', 'pyspatialctx.*']),

    # Numba drives the hot loops; scipy supplies the k-d tree, rotations and
    # dilation; Pillow writes the point-map images; requests talks to agents.
    install_requires=[
        'numpy>=1.20.0',
        'numba>=0.55.0',
        'scipy>=1.7',
        'Pillow>=9.0',
        'requests>=2.25',
    ],

    entry_points={
        'console_scripts': [
            'pyspatialctx=pyspatialctx.cli:main',
        ],
    },

    data_files=[
        ('.', ['README.md', 'copyright.txt'])
    ],

    keywords=[
        'point-cloud', 'scene-graph', 'hypergraph', 'icp', 'layout', 'numba',
        'spatial-reasoning', 'path-planning'
    ],

    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    python_requires='>=3.9',
)
