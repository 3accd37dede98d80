#
# Copyright (C) 2025 Kris Kirby
#
# This file is part of PySpatialCtx.
#
# PySpatialCtx is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

# Sphinx configuration for the PySpatialCtx API reference.

import os
import sys

sys.path.insert(0, os.path.abspath('../../'))

project = 'PySpatialCtx'
copyright = '2025, Kris Kirby'
author = 'Kris Kirby'
version = '0.1'
release = '0.1.0'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.mathjax',  # relation loss formulas
]

exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'furo'
autodoc_member_order = 'bysource'
