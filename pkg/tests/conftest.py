import random

import pytest

from rdaudit.group import get_suite
from rdaudit.protocol import Block, StoredFile, encode_file, keygen, sig_gen


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # keeps the call-phase outcome on the item for reporting fixtures
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


@pytest.fixture
def suite():
    return get_suite()


@pytest.fixture
def rng():
    return random.Random(20140122)


def make_file(rng, n_bytes=200, s=1, file_id="f"):
    """Key pair plus a freshly uploaded server-side file."""
    kp, pk = keygen(rng, s)
    blocks = encode_file(rng.randbytes(n_bytes), s, rng=rng)
    tags, _, meta = sig_gen(kp, pk, blocks, file_id)
    return kp, pk, StoredFile.from_upload(pk, blocks, tags, meta)


def file_with_blocks(rng, n, s=1, file_id="f"):
    """Exactly ``n`` random full blocks, without the file length header."""
    kp, pk = keygen(rng, s)
    blocks = [Block.from_bytes(rng.randbytes(8).hex(), rng.randbytes(7 * s), s) for _ in range(n)]
    tags, _, meta = sig_gen(kp, pk, blocks, file_id)
    return kp, pk, StoredFile.from_upload(pk, blocks, tags, meta)
