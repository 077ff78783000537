import numpy as np
import pytest

from regiondit.pnm import read_pnm, write_pnm


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("channels", [1, 3])
def test_round_trip(tmp_path, rng, binary, channels):
    shape = (5, 7) if channels == 1 else (5, 7, 3)
    img = np.round(rng.random(shape) * 255) / 255
    write_pnm(tmp_path / "x.pnm", img, binary=binary)
    np.testing.assert_allclose(read_pnm(tmp_path / "x.pnm"), img, atol=1e-12)


def test_16bit(tmp_path):
    img = np.array([[0.0, 1.0], [0.5, 0.25]])
    write_pnm(tmp_path / "x.pgm", img, maxval=65535)
    np.testing.assert_allclose(read_pnm(tmp_path / "x.pgm"), img, atol=1 / 65535)


def test_comments(tmp_path):
    (tmp_path / "c.pgm").write_text("P2\n# made by hand\n2 1\n# max\n4\n0 4\n")
    assert read_pnm(tmp_path / "c.pgm").tolist() == [[0.0, 1.0]]
