import os

# single-threaded BLAS keeps floating-point reductions reproducible run to run
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flowrecon import kernels

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


TINY_TRAIN = dict(epochs=1, batch_size=8, points_per_cloud=64, latent_dim=8, flow_layers=4, flow_hidden=16, seed=2)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    from flowrecon.dataset import DatasetConfig, build_dataset

    out = tmp_path_factory.mktemp("toy_data")
    build_dataset(DatasetConfig(shapes_per_category=10, points_per_cloud=512, resolution=16, seed=2), out)
    return out


@pytest.fixture(scope="session")
def toy_run(toy_data, tmp_path_factory):
    """Checkpoints of a one-epoch tiny model: trained, untrained and trained without D."""
    from flowrecon.numeric import strip_groups
    from flowrecon.training import Model, TrainConfig, TrainState, save_state, train

    out = tmp_path_factory.mktemp("toy_run")
    cfg = TrainConfig(**TINY_TRAIN)
    train(cfg, toy_data / "manifest.json", out)
    save_state(out / "untrained.fgck", TrainState(Model(cfg)))
    strip_groups(out / "final.fgck", out / "stripped.fgck")
    strip_groups(out / "final.fgck", out / "generator_only.fgck", drop=("disc", "phi"))
    return out


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
