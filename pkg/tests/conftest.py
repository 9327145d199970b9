import pytest

from kerbwatch.geo import GeoPoint, PixelPoint, solve_geoframe

SQUARE_PIXELS = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]
SQUARE_GEO = [(40.0, -8.0), (40.0, -7.999), (40.001, -7.999), (40.001, -8.0)]


@pytest.fixture
def square_pairs():
    return [(PixelPoint(*p), GeoPoint(*g)) for p, g in zip(SQUARE_PIXELS, SQUARE_GEO)]


@pytest.fixture
def square_frame(square_pairs):
    return solve_geoframe(square_pairs)


@pytest.fixture
def square_config_doc():
    return {
        "camera_id": "cam-test",
        "frame": {"width": 640, "height": 480},
        "correspondences": [
            {"u": p[0], "v": p[1], "lat": g[0], "lon": g[1]} for p, g in zip(SQUARE_PIXELS, SQUARE_GEO)
        ],
    }
