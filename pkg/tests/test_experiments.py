import numpy as np
import pytest

from bnnprior.errors import InvalidConfig
from bnnprior.experiments import (
    TASK_DEFAULTS,
    build_task,
    ensemble_size_sweep,
    sweep_sgld_config,
    task_from_options,
)
from bnnprior.family import IsotropicPrior
from bnnprior.posterior import SgldConfig
from bnnprior.rng import derive_rng


@pytest.mark.parametrize("epochs, burn, k", [(10, None, 25), (100, None, 25), (30, 5, 3), (6, 0, 6)])
def test_sweep_config_fits_all_members(epochs, burn, k):
    cfg = SgldConfig(epochs=epochs, burnin_epochs=burn, n_samples=1)
    out = sweep_sgld_config(cfg, k)
    b, t = out.schedule()
    assert out.n_samples == k and t >= 1
    assert b == (epochs // 2 if burn is None else burn)
    assert b + k * t <= out.epochs
    assert out.epochs == max(epochs, b + k * t)


@pytest.mark.parametrize("name", ["pendulum", "decoy", "fairness", "clinical"])
def test_tasks_build_with_small_sizes(name):
    t = build_task(name, 0, n_train=30, n_test=20, n_unlabeled=10)
    assert (len(t.train), len(t.test), len(t.unlabeled)) == (30, 20, 10)
    assert t.train.X.shape[1] == t.arch.input_dim
    assert np.all(np.isfinite(t.train.X))
    assert (t.train.masks is not None) == (name == "decoy")


def test_tasks_are_seed_deterministic():
    a = build_task("clinical", 3, n_train=30, n_test=20, n_unlabeled=10)
    b = build_task("clinical", 3, n_train=30, n_test=20, n_unlabeled=10)
    np.testing.assert_array_equal(a.train.X, b.train.X)
    c = build_task("clinical", 4, n_train=30, n_test=20, n_unlabeled=10)
    assert not np.array_equal(a.train.X, c.train.X)


def test_unknown_task():
    with pytest.raises(InvalidConfig):
        build_task("mnist", 0)
    with pytest.raises(InvalidConfig):
        task_from_options("mnist", 0, {})


def test_task_from_options_applies_overrides():
    t = task_from_options("fairness", 1, {"n_train": 40, "n_test": 20, "n_unlabeled": 20, "hidden": 5})
    assert t.arch.layer_sizes == (6, 5, 1) and len(t.train) == 40
    assert set(TASK_DEFAULTS) == {"pendulum", "decoy", "fairness", "clinical"}


def test_ensemble_size_sweep_prefixes_one_chain():
    t = build_task("fairness", 0, n_train=60, n_test=40, n_unlabeled=10, hidden=4)
    cfg = SgldConfig(step_size=1e-3, epochs=4, batch_size=30, n_samples=1)
    res = ensemble_size_sweep(t.arch, IsotropicPrior(0.1), t.train, t.test, cfg, (1, 3, 6), "accuracy",
                              derive_rng(0, "s"))
    assert [k for k, _ in res] == [1, 3, 6]
    assert all(0.0 <= v <= 1.0 for _, v in res)
