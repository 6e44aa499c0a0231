from __future__ import annotations

import pytest

from fisherstefan.mesh import MeshSpec, build_mesh


@pytest.fixture(scope="session")
def default_mesh():
    return build_mesh(MeshSpec())
