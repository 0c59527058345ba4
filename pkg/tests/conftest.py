import random

import pytest

from jmpath.pipeline import Keys

KEY = b"\x11" * 32
NONCE = b"\x22" * 16


@pytest.fixture
def keys():
    return Keys(master_key=b"\xa1" * 32, shuffle_key=b"\xb2" * 32,
                mac_key=b"\xc3" * 32)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
