import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gwharmonic.offspring import make_stable_rho, survival_probs
from gwharmonic.rde import Pools, solve_Chat, solve_W
from gwharmonic.streams import stream

_POOL_CACHE = {}


def solved_pools(alpha, chat=False, base=10**5, iters=60, readout=10**6):
    """Session-wide cache of converged pools (deterministic seeds)."""
    key = (alpha, chat, base, iters, readout)
    if key not in _POOL_CACHE:
        joint = solve_W(alpha, base, iters, stream(7001, "pools-w", alpha), readout)
        chat_pool = None
        if chat:
            chat_pool = solve_Chat(
                alpha, joint, base, iters, stream(7002, "pools-chat", alpha), readout
            )
        _POOL_CACHE[key] = Pools(alpha=alpha, joint=joint, chat=chat_pool)
    return _POOL_CACHE[key]


@pytest.fixture(scope="session")
def pools_factory():
    return solved_pools


_LAW_CACHE = {}


def law_and_table(alpha, gamma=None, n_max=2048):
    key = (alpha, gamma, n_max)
    if key not in _LAW_CACHE:
        law = make_stable_rho(alpha, gamma)
        _LAW_CACHE[key] = (law, survival_probs(law, n_max))
    return _LAW_CACHE[key]


@pytest.fixture(scope="session")
def laws_factory():
    return law_and_table
