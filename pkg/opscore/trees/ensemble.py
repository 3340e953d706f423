"""
Bagged CART and random forests with out-of-bag class probabilities.

Tree t draws its bootstrap sample and every per-split column subset from the stream
np.random.default_rng([seed, t]), so ensembles do not depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from opscore.core.config import settings
from opscore.core.logger import tree_logger as logger
from opscore.schemas.propensity import PropensityMatrix
from opscore.schemas.tree import Ensemble, Tree, TreeParams
from opscore.trees.cart import grow_cart, leaf_proportions


def tree_seed(random_state) -> int:
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2**63 - 1))
    if random_state is None:
        return int(np.random.default_rng().integers(2**63 - 1))
    return int(random_state)


def _grow_one(x: np.ndarray, z: np.ndarray, params: TreeParams, n_classes: int, seed: int, index: int):
    rng = np.random.default_rng([seed, index])
    n = x.shape[0]
    rows = rng.integers(0, n, size=n)
    tree = grow_cart(x[rows], z[rows], params, n_classes=n_classes, rng=rng)
    return tree, np.bincount(rows, minlength=n)


def build_ensemble(
    x: np.ndarray,
    z: np.ndarray,
    n_trees: int,
    params: TreeParams,
    n_classes: int | None = None,
    random_state=None,
    n_jobs: int | None = None,
) -> Ensemble:
    if n_trees < 1:
        raise ValueError("an ensemble needs at least one tree")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=np.int64)
    J = int(n_classes or z.max())
    seed = tree_seed(random_state)
    workers = max(1, n_jobs or settings.threads)

    if workers == 1:
        grown = [_grow_one(x, z, params, J, seed, t) for t in range(n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grown = list(pool.map(lambda t: _grow_one(x, z, params, J, seed, t), range(n_trees)))
    trees = tuple(t for t, _ in grown)
    inbag = np.vstack([c for _, c in grown])

    n = x.shape[0]
    prob_sum = np.zeros((n, J))
    coverage = np.zeros(n, dtype=np.int64)
    for tree, counts in zip(trees, inbag):
        oob = np.flatnonzero(counts == 0)
        if oob.size:
            prob_sum[oob] += leaf_proportions(tree, x[oob])
            coverage[oob] += 1

    oob_prob = np.zeros((n, J))
    covered = coverage > 0
    oob_prob[covered] = prob_sum[covered] / coverage[covered, None]
    backfilled = ~covered
    if backfilled.any():
        logger.warning(f"{int(backfilled.sum())} rows were never out of bag; using the full-ensemble prediction for them")
        oob_prob[backfilled] = mean_proportions(trees, x[backfilled])
    return Ensemble(trees=trees, inbag=inbag, oob_prob=oob_prob, coverage_count=coverage, backfilled=backfilled)


def bag_cart(
    x: np.ndarray,
    z: np.ndarray,
    b: int = 200,
    params: TreeParams | None = None,
    n_classes: int | None = None,
    random_state=None,
    n_jobs: int | None = None,
) -> Ensemble:
    """b CART trees on size-n bootstrap resamples, every column searched at every split."""
    params = (params or TreeParams()).model_copy(update={"mtry": None})
    return build_ensemble(x, z, b, params, n_classes, random_state, n_jobs)


def random_forest(
    x: np.ndarray,
    z: np.ndarray,
    ntree: int = 1000,
    params: TreeParams | None = None,
    n_classes: int | None = None,
    random_state=None,
    n_jobs: int | None = None,
) -> Ensemble:
    """Bootstrap trees grown without cp pruning; each split searches mtry random columns (default floor(sqrt(k)))."""
    params = params or TreeParams()
    params = params.model_copy(update={"cp": 0.0, "mtry": params.mtry if params.mtry is not None else "sqrt"})
    return build_ensemble(x, z, ntree, params, n_classes, random_state, n_jobs)


def mean_proportions(trees: tuple[Tree, ...] | list[Tree], x: np.ndarray) -> np.ndarray:
    return np.mean([leaf_proportions(tree, x) for tree in trees], axis=0)


def predict_prob(ensemble: Ensemble, x: np.ndarray) -> PropensityMatrix:
    """Average of raw leaf proportions over trees, clipped and renormalized."""
    return PropensityMatrix.from_probabilities(mean_proportions(ensemble.trees, x))


def oob_propensity(ensemble: Ensemble) -> PropensityMatrix:
    return PropensityMatrix.from_probabilities(ensemble.oob_prob)
