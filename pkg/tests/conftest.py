import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from ttacope.config import ExperimentConfig  # noqa: E402
from ttacope.pipeline import build_streams, pretrain_model, run_and_evaluate  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@dataclass
class SeedArtifacts:
    cfg: ExperimentConfig
    source: object
    target: object
    params: object
    setup_time_s: float
    runs: dict = field(default_factory=dict)

    def run(self, method, interval=None, ensemble="default", teacher=None, key=None):
        """Cached adaptation run on this seed's target stream."""
        key = key or (method, interval, ensemble)
        if key not in self.runs:
            self.runs[key] = run_and_evaluate(self.cfg, self.params, self.target, method, interval, ensemble, teacher)
        return self.runs[key]


class ExperimentCache:
    """Default-config streams and pretrained models, built once per seed per session."""

    def __init__(self):
        self._seeds = {}
        self._extra = {}

    def get(self, seed: int) -> SeedArtifacts:
        if seed not in self._seeds:
            t0 = time.perf_counter()
            cfg = ExperimentConfig().with_seed(seed)
            source, target = build_streams(cfg)
            params, _ = pretrain_model(cfg, source.frames)
            self._seeds[seed] = SeedArtifacts(cfg, source, target, params, time.perf_counter() - t0)
        return self._seeds[seed]

    def second_model(self, seed: int, model_seed: int):
        """Another model pretrained on the same source stream with a different init seed."""
        key = (seed, model_seed)
        if key not in self._extra:
            base = self.get(seed)
            t0 = time.perf_counter()
            cfg = replace(base.cfg, model=replace(base.cfg.model, seed=model_seed))
            params, _ = pretrain_model(cfg, base.source.frames)
            self._extra[key] = (params, time.perf_counter() - t0)
        return self._extra[key]


@pytest.fixture(scope="session")
def experiments():
    return ExperimentCache()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
