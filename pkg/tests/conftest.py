import numpy as np
import pytest

from mstsplat.camera import PinholeCamera
from mstsplat.raster import available_backends


def pytest_report_header(config):
    return f"mstsplat raster backends: {', '.join(available_backends())}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def front_cam():
    """Identity extrinsics, 64x64, looking down +Z."""
    return PinholeCamera(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param
