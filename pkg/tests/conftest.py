from __future__ import annotations

import pytest

from omnitir.media_store import MediaStore

from helpers import make_avi_bytes, make_png_bytes, make_wav_bytes


@pytest.fixture
def store(tmp_path) -> MediaStore:
    return MediaStore(tmp_path / "media")


@pytest.fixture(scope="session")
def wav_150s() -> bytes:
    return make_wav_bytes(150)


@pytest.fixture(scope="session")
def avi_150s() -> bytes:
    return make_avi_bytes(150)


@pytest.fixture(scope="session")
def avi_10s() -> bytes:
    return make_avi_bytes(10)


@pytest.fixture(scope="session")
def png_100() -> bytes:
    return make_png_bytes(100, 100)
