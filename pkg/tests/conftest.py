import os
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_DATA_DIR = REPO_ROOT / "data" / "mnist"


def mnist_dir() -> Path:
    return Path(os.environ.get("LLOOM_DATA_DIR", DEFAULT_DATA_DIR))


@pytest.fixture(scope="session")
def data_dir() -> Path:
    d = mnist_dir()
    if not d.exists():
        pytest.fail(f"MNIST data directory not found: {d} (set LLOOM_DATA_DIR; see README)")
    return d


@pytest.fixture(scope="session")
def mnist_train(data_dir):
    from latent_loom.data_ingest import load_mnist

    return load_mnist(data_dir, "train")


def pytest_runtest_logreport(report):
    """Print one pass/fail line per acceptance criterion as it completes."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_c"):
        return
    label = name.split("_", 2)[1].upper()  # e.g. c04a -> C04A
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[ACCEPTANCE {label}] {status} {name} ({report.duration:.1f}s)", flush=True)
