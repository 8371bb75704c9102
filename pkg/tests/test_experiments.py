import numpy as np
import pytest

from spinchain import experiments as X
from spinchain.config import default_config


def _table(rep):
    return rep.table_text()


@pytest.mark.parametrize(
    "eid, params",
    [
        ("gce-decay", {}),
        ("variance-band", {"Ns": (8, 16, 32, 64)}),
        ("mean-conservation", {"Ns": (8, 16), "mcmc_N": 16, "mcmc_sweeps": 20_000}),
        ("moment-scaling", {"N": 64, "n_sweeps": 20_000, "sizes": (8, 16, 32, 64)}),
    ],
)
def test_rerun_is_bit_identical(eid, params):
    a = X.run_experiment(eid, default_config(), seed=3, **params)
    b = X.run_experiment(eid, default_config(), seed=3, **params)
    assert _table(a) == _table(b)
    assert a.fitted == b.fitted


def test_threads_do_not_change_results():
    a = X.run_experiment("variance-band", default_config(), threads=1, Ns=(8, 16, 32, 64))
    b = X.run_experiment("variance-band", default_config(), threads=3, Ns=(8, 16, 32, 64))
    assert _table(a) == _table(b)


def test_registry_covers_all_criteria():
    assert sorted(X.CRITERIA) == list(range(1, 12))
    assert set(X.CRITERIA.values()) <= set(X.REGISTRY)


def test_random_observables_are_local():
    obs = X.random_local_observables(10, 3, seed=0)
    assert len(obs) == 10
    assert all(f.is_contiguous and len(f.support) <= 3 for f in obs)
    again = X.random_local_observables(10, 3, seed=0)
    x = np.array([0.3, -0.7, 1.1])
    assert [f(x) for f in obs] == [f(x) for f in again]


def test_unknown_experiment():
    with pytest.raises(KeyError):
        X.run_experiment("nope")
