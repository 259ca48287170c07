import numpy as np
import pytest

import skelterp as sk


@pytest.fixture(scope="session")
def chair():
    return sk.bundled_spec("chair")


@pytest.fixture(scope="session")
def tetrapod():
    return sk.bundled_spec("tetrapod")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def make_pose():
    """Pose sampler matching the default dataset ranges."""

    def _make(r):
        return sk.CameraPose(
            r.uniform(-np.pi / 2, np.pi / 2, 3),
            np.array(
                [r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5), r.uniform(2.0, 6.0)]
            ),
            float(r.uniform(1.0, 3.0)),
        )

    return _make


@pytest.fixture(scope="session")
def make_alpha():
    def _make(r, spec):
        lo, hi = spec.alpha_ranges[:, 0], spec.alpha_ranges[:, 1]
        return r.uniform(lo, hi)

    return _make
