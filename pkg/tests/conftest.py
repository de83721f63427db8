import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from echossl.core import Manifest, ManifestEntry, RngStream
from echossl.experiment import build_dataset, load_dataset
from echossl.synthdata import ACCEPTANCE_PRESET, small_preset

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("suite")


def fake_manifest(n: int, labeled: bool = True, seed: int = 0) -> Manifest:
    """A manifest of n synthetic records without any files behind it."""
    g = RngStream(seed, "fake-manifest").generator()
    entries = []
    for i in range(n):
        entries.append(ManifestEntry(
            source_id=f"clip-{i:04d}",
            path=f"clip-{i:04d}.npy",
            fps=float(g.uniform(10, 75)),
            frame_count=int(g.integers(16, 182)),
            label=float(g.uniform(2, 10)) if labeled else None,
        ))
    return Manifest(tuple(entries))


def strip_wall_time(records):
    """Loss-log rows minus the wall_time field, for run-to-run comparison."""
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


@pytest.fixture(scope="session")
def small_ds_dir(tmp_path_factory):
    """On-disk copy of the 12-clip dataset, for file-facing interfaces."""
    out = tmp_path_factory.mktemp("small-ds")
    build_dataset(small_preset(n_clips=12, seed=3), save_dir=out)
    return out


@pytest.fixture(scope="session")
def small_ds(small_ds_dir):
    """12 small synthetic clips, preprocessed, shared across train tests."""
    return load_dataset(small_ds_dir)


@pytest.fixture(scope="session")
def acceptance_ds(tmp_path_factory):
    """The 96-clip acceptance dataset (seed 7); built once per session."""
    out = tmp_path_factory.mktemp("acceptance-ds")
    return build_dataset(ACCEPTANCE_PRESET, save_dir=out)


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


@pytest.fixture
def terminal_line(request):
    """Write a line straight to the pytest terminal, bypassing capture."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def write(text: str) -> None:
        if reporter is not None:
            reporter.write_line(text)
        else:  # pragma: no cover - no terminal plugin (e.g. xdist worker)
            print(text)

    return write
