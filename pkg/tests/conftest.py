import numpy as np
import pytest

from octchoroid.ingest import BScan, ScanMetadata


def make_meta(width, height, fovea_col=None, lateral=10.0, axial=4.0):
    return ScanMetadata(lateral, axial, width, height, True, "right", fovea_col)


def make_scan(pixels, **kw):
    pixels = np.asarray(pixels, dtype=np.float64)
    return BScan(pixels, make_meta(pixels.shape[1], pixels.shape[0], **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
