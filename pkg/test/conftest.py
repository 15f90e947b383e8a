# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from fraclap.fracfem import FracParams
from fraclap.mesh import make_disc_mesh
from fraclap.stiffness import assemble_stiffness

import pytest


def pytest_addoption(parser):
    parser.addoption(
        '--runslow', action='store_true', default=False, help='run convergence studies'
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def disc_mesh():
    return make_disc_mesh(16).unwrap()


@pytest.fixture(scope='session')
def stiffness(disc_mesh):
    return assemble_stiffness(disc_mesh, FracParams(0.5).unwrap()).unwrap()
