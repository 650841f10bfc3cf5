import time

import numpy as np
import pytest

from neckmcl.mclnet import TrainConfig
from neckmcl.oracle import default_oracle, gen_dataset
from neckmcl.pipeline import train_mcl_model, train_trajectory_model
from neckmcl.trajectory import TRAJNET_TRAIN

SEED = 0


@pytest.fixture(scope="session")
def oracle():
    return default_oracle()


@pytest.fixture(scope="session")
def pilot(oracle):
    """Full 63-anchor training protocol, 8 participants."""
    return gen_dataset(oracle, "pilot", SEED)


@pytest.fixture(scope="session")
def eval_set(oracle):
    """Disjoint 16-anchor evaluation protocol, 6 participants."""
    return gen_dataset(oracle, "eval", SEED)


@pytest.fixture(scope="session")
def trained(pilot):
    """MCLNet and TrajectoryNet trained on the full pilot protocol, with timings."""
    t0 = time.perf_counter()
    mcl_net, mcl_hist = train_mcl_model(pilot.sessions, TrainConfig(seed=SEED))
    t1 = time.perf_counter()
    traj_net, traj_hist = train_trajectory_model(pilot.sessions, TRAJNET_TRAIN)
    t2 = time.perf_counter()
    return {"mcl": mcl_net, "traj": traj_net, "mcl_history": mcl_hist, "traj_history": traj_hist,
            "mcl_seconds": t1 - t0, "traj_seconds": t2 - t1}


@pytest.fixture(scope="session")
def mcl_net(trained):
    return trained["mcl"]


@pytest.fixture(scope="session")
def traj_net(trained):
    return trained["traj"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
