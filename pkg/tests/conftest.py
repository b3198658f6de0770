import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crossrec.data import InteractionDataset


def make_dataset(domain_id, pairs, num_users=None, num_items=None, user_prefix="u"):
    """Dataset from raw (user, item) index pairs with generated external ids.

    Users with the same prefix+index share an external id across domains and
    therefore overlap; pass a domain-specific prefix to avoid that.
    """
    pairs = np.array(sorted(set(map(tuple, pairs))), dtype=np.int64)
    nu = int(pairs[:, 0].max()) + 1 if num_users is None else num_users
    ni = int(pairs[:, 1].max()) + 1 if num_items is None else num_items
    return InteractionDataset(
        domain_id,
        [f"{user_prefix}{k:05d}" for k in range(nu)],
        [f"{domain_id}_i{k:05d}" for k in range(ni)],
        pairs,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
