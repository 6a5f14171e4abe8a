import numpy as np
import pytest

from markovllt.chain import ChainSpec
from markovllt.observables import coordinate_observable


def fair_coin(n_steps: int, a: float = 0.5) -> ChainSpec:
    k = np.array([[0.5, 0.5], [0.5, 0.5]])
    return ChainSpec.repeating(n_steps, [k], np.array([0.5, 0.5]), a)


def reversible_chain(n_steps: int, a: float = 0.3) -> ChainSpec:
    """Stationary chain with kernel [[.9,.1],[.2,.8]]; detailed balance holds."""
    k = np.array([[0.9, 0.1], [0.2, 0.8]])
    return ChainSpec.repeating(n_steps, [k], np.array([2 / 3, 1 / 3]), a)


def alternating_chain(n_steps: int, a: float = 0.5) -> ChainSpec:
    k1 = np.array([[0.8, 0.2], [0.3, 0.7]])
    k2 = np.array([[0.6, 0.4], [0.25, 0.75]])
    return ChainSpec.repeating(n_steps, [k1, k2], np.array([0.5, 0.5]), a)


def iid_three(n_steps: int, probs=(1 / 3, 1 / 3, 1 / 3), a: float = 0.5) -> ChainSpec:
    p = np.array(probs, dtype=float)
    return ChainSpec.repeating(n_steps, [np.tile(p, (3, 1))], p, a)


def signs_chain(n_steps: int, a: float = 0.5) -> ChainSpec:
    k = np.array([[0.5, 0.5], [0.5, 0.5]])
    states = [(1, -1)] * (n_steps + 1)
    return ChainSpec.repeating(n_steps, [k], np.array([0.5, 0.5]), a,
                               states=states)


def coin_coordinate(n_steps: int, count: int | None = None, scale: float = 1.0):
    chain = fair_coin(n_steps)
    vals = [np.array([0.0, scale])] * (count or n_steps)
    return chain, coordinate_observable(chain, values=vals, count=count)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260810)
