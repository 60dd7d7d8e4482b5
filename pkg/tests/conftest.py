from __future__ import annotations

import pytest

from feddrop import generate
from feddrop.task import STANDARD_GENERATOR


@pytest.fixture(autouse=True)
def single_thread_by_default(monkeypatch):
    # the models are tiny, so worker threads are pure overhead; tests that
    # exercise the parallel path override this explicitly
    monkeypatch.setenv("FEDDROP_THREADS", "1")


@pytest.fixture(scope="session")
def standard_dataset():
    return generate(STANDARD_GENERATOR)
