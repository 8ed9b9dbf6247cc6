import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from votemark import default_config, run_pipeline


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One full pipeline run of the default desk-scale profile (timed)."""
    import time

    out = tmp_path_factory.mktemp("desk") / "run"
    start = time.perf_counter()
    result = run_pipeline(default_config(), out)
    elapsed = time.perf_counter() - start
    assert result.status == "ok"
    return {"out": out, "elapsed": elapsed}


MINI_OVERRIDES = {
    "split.train": "400",
    "split.validation": "50",
    "split.test": "150",
    "split.mimic-attack": "150",
    "split.real-attack": "150",
    "train.epochs": "15",
    "candidates.count": "300",
    "attack.suite_size": "3",
    "fingerprint.min_size": "5",
}


@pytest.fixture(scope="session")
def mini_config():
    """Small, fast profile for tests that only need a working pipeline."""
    return default_config().with_overrides(**MINI_OVERRIDES)
