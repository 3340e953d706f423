"""
Classification trees: greedy Gini growth, weakest-link cost-complexity pruning with
K-fold cross-validation, and leaf-probability prediction.
"""

from typing import NamedTuple

import numpy as np
from sklearn.model_selection import KFold

from opscore.core.logger import tree_logger as logger
from opscore.schemas.propensity import PropensityMatrix
from opscore.schemas.tree import CpRow, Tree, TreeParams


class Split(NamedTuple):
    column: int
    threshold: float
    decrease: float
    n_left: int


def gini_total(counts: np.ndarray) -> float:
    """n * Gini(counts) = n - sum(c^2) / n."""
    n = counts.sum()
    if n <= 0:
        return 0.0
    return float(n - np.sum(counts**2) / n)


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int, min_node: int, columns: np.ndarray) -> Split | None:
    """
    Best (column, midpoint) split of the rows in x by Gini decrease.

    y holds 0-based class indices. Both children need at least min_node rows.
    Ties go to the earliest column in `columns`, then the smallest threshold.
    """
    n = x.shape[0]
    if n < 2 or columns.size == 0:
        return None
    xc = x[:, columns]
    order = np.argsort(xc, axis=0, kind="stable")
    xs = np.take_along_axis(xc, order, axis=0)
    onehot = np.eye(n_classes)[y]
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1) x m x J
    total = onehot.sum(axis=0)
    right = total - left
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    impurity = (n_left - np.sum(left**2, axis=2) / n_left) + (n_right - np.sum(right**2, axis=2) / n_right)
    decrease = gini_total(total) - impurity

    valid = (xs[1:] > xs[:-1]) & (n_left >= min_node) & (n_right >= min_node)
    decrease = np.where(valid, decrease, -np.inf)
    flat = decrease.T.ravel()  # column-major over (column, position)
    best = int(np.argmax(flat))
    if not np.isfinite(flat[best]) or flat[best] <= 0:
        return None
    col_pos, row_pos = divmod(best, n - 1)
    threshold = 0.5 * (xs[row_pos, col_pos] + xs[row_pos + 1, col_pos])
    return Split(int(columns[col_pos]), float(threshold), float(flat[best]), row_pos + 1)


def grow_cart(
    x: np.ndarray,
    z: np.ndarray,
    params: TreeParams | None = None,
    n_classes: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """
    Grow a classification tree on x (rows x columns) for 1-based labels z.

    A node is split only when it holds at least 2 * min_node rows, sits above max_depth,
    is impure, and its best split removes at least cp of the root's Gini total. When
    params.mtry is set and rng is given, every split searches a fresh sorted random subset
    of mtry columns.
    """
    params = params or TreeParams()
    x = np.asarray(x, dtype=float)
    y = np.asarray(z, dtype=np.int64) - 1
    J = int(n_classes or (y.max() + 1 if y.size else 1))
    n, k = x.shape
    mtry = params.resolve_mtry(k)
    subsample = rng is not None and params.mtry is not None

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def new_node(rows: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[rows], minlength=J).astype(float))
        return len(feature) - 1

    root_rows = np.arange(n)
    root = new_node(root_rows)
    root_total = gini_total(counts[root])
    stack = [(root, root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        node_counts = counts[node]
        if rows.size < 2 * params.min_node or depth >= params.max_depth or np.count_nonzero(node_counts) <= 1:
            continue
        if subsample:
            columns = np.sort(rng.choice(k, size=mtry, replace=False))
        else:
            columns = np.arange(k)
        split = best_split(x[rows], y[rows], J, params.min_node, columns)
        if split is None or root_total <= 0 or split.decrease / root_total < params.cp:
            continue
        go_left = x[rows, split.column] <= split.threshold
        left_rows, right_rows = rows[go_left], rows[~go_left]
        feature[node] = split.column
        threshold[node] = split.threshold
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        stack.append((right[node], right_rows, depth + 1))
        stack.append((left[node], left_rows, depth + 1))

    tree = Tree(
        feature=np.asarray(feature),
        threshold=np.asarray(threshold),
        left=np.asarray(left),
        right=np.asarray(right),
        counts=np.vstack(counts),
        node_ids=np.arange(len(feature)),
        n_classes=J,
        params=params,
    )
    sequence = pruning_sequence(tree)
    return tree.model_copy(update={"cp_table": _cp_rows(tree, sequence)})


def apply(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Leaf node index reached by every row of x."""
    x = np.asarray(x, dtype=float)
    node = np.zeros(x.shape[0], dtype=np.int64)
    internal = tree.feature[node] >= 0
    while internal.any():
        idx = np.flatnonzero(internal)
        cur = node[idx]
        go_left = x[idx, tree.feature[cur]] <= tree.threshold[cur]
        node[idx] = np.where(go_left, tree.left[cur], tree.right[cur])
        internal = tree.feature[node] >= 0
    return node


def leaf_proportions(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Raw training class proportions of the leaf each row falls in."""
    return tree.proportions[apply(tree, x)]


def predict_prob(tree: Tree, x: np.ndarray) -> PropensityMatrix:
    """Laplace-smoothed leaf probabilities (count_j + 1) / (leaf_n + J)."""
    leaf_counts = tree.counts[apply(tree, x)]
    prob = (leaf_counts + 1.0) / (leaf_counts.sum(axis=1, keepdims=True) + tree.n_classes)
    return PropensityMatrix.from_probabilities(prob)


def predict_class(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Majority class (1-based) of each row's leaf; ties go to the lowest label."""
    return np.argmax(tree.counts[apply(tree, x)], axis=1) + 1


def _node_risk(tree: Tree) -> np.ndarray:
    """Misclassification count if the node were a leaf."""
    return tree.counts.sum(axis=1) - tree.counts.max(axis=1)


def pruning_sequence(tree: Tree) -> list[tuple[float, frozenset[int]]]:
    """
    Weakest-link sequence: (alpha, collapsed internal nodes) with alpha increasing.

    alpha is on the misclassification-count scale; the first entry is the full tree.
    Every entry's subtree contains the next one's.
    """
    risk = _node_risk(tree)
    collapsed: set[int] = set()
    sequence: list[tuple[float, frozenset[int]]] = [(0.0, frozenset())]
    if tree.is_leaf[0]:
        return sequence

    while 0 not in collapsed:
        sub_risk = np.zeros(tree.n_nodes)
        n_leaves = np.zeros(tree.n_nodes)
        g = np.full(tree.n_nodes, np.inf)
        # children always carry larger indices than their parent
        for node in range(tree.n_nodes - 1, -1, -1):
            if tree.is_leaf[node] or node in collapsed:
                sub_risk[node] = risk[node]
                n_leaves[node] = 1
                continue
            l, r = tree.left[node], tree.right[node]
            sub_risk[node] = sub_risk[l] + sub_risk[r]
            n_leaves[node] = n_leaves[l] + n_leaves[r]
            g[node] = (risk[node] - sub_risk[node]) / (n_leaves[node] - 1)
        reachable = _reachable(tree, collapsed)
        g[~reachable] = np.inf
        alpha = float(g.min())
        weakest = np.flatnonzero(g <= alpha + 1e-12)
        collapsed.update(int(v) for v in weakest)
        entry = (max(alpha, 0.0), frozenset(collapsed))
        if entry[0] <= sequence[-1][0] + 1e-12:
            sequence[-1] = (sequence[-1][0], entry[1])
        else:
            sequence.append(entry)
    return sequence


def _reachable(tree: Tree, collapsed: set[int] | frozenset[int]) -> np.ndarray:
    """Nodes still present when every node in `collapsed` is turned into a leaf."""
    reach = np.zeros(tree.n_nodes, dtype=bool)
    stack = [0]
    while stack:
        node = stack.pop()
        reach[node] = True
        if tree.feature[node] >= 0 and node not in collapsed:
            stack.extend([int(tree.left[node]), int(tree.right[node])])
    return reach


def _cp_rows(tree: Tree, sequence, xerror=None, xstd=None) -> tuple[CpRow, ...]:
    root_risk = max(float(_node_risk(tree)[0]), 1.0)
    rows = []
    for i, (alpha, collapsed) in enumerate(sequence):
        leaves = int((_reachable(tree, collapsed) & (tree.is_leaf | np.isin(np.arange(tree.n_nodes), list(collapsed)))).sum())
        rows.append(
            CpRow(
                cp=alpha / root_risk,
                nsplit=leaves - 1,
                xerror=None if xerror is None else float(xerror[i]),
                xstd=None if xstd is None else float(xstd[i]),
            )
        )
    return tuple(rows)


def subtree(tree: Tree, collapsed: frozenset[int] | set[int]) -> Tree:
    """Compact copy of the tree with every node in `collapsed` turned into a leaf; node_ids keep the original ids."""
    feature, threshold, left, right, counts, ids = [], [], [], [], [], []

    def add(node: int) -> int:
        idx = len(feature)
        ids.append(int(tree.node_ids[node]))
        counts.append(tree.counts[node])
        if tree.feature[node] < 0 or node in collapsed:
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            return idx
        feature.append(int(tree.feature[node]))
        threshold.append(float(tree.threshold[node]))
        left.append(-1)
        right.append(-1)
        left[idx] = add(int(tree.left[node]))
        right[idx] = add(int(tree.right[node]))
        return idx

    add(0)
    return Tree(
        feature=np.asarray(feature),
        threshold=np.asarray(threshold),
        left=np.asarray(left),
        right=np.asarray(right),
        counts=np.vstack(counts),
        node_ids=np.asarray(ids),
        n_classes=tree.n_classes,
        params=tree.params,
        cp_table=tree.cp_table,
    )


def _optimal_at(sequence, alpha: float) -> frozenset[int]:
    """Subtree of a weakest-link sequence that is optimal at complexity alpha."""
    chosen = sequence[0][1]
    for a, collapsed in sequence:
        if a <= alpha + 1e-12:
            chosen = collapsed
        else:
            break
    return chosen


def prune_cart(tree: Tree, x: np.ndarray, z: np.ndarray, folds: int = 10, random_state=None) -> Tree:
    """
    Cost-complexity pruning with the subtree chosen by K-fold CV misclassification error.

    Each fold regrows a tree with the same parameters; candidate complexities are the
    geometric means of consecutive alphas of the full tree's sequence, rescaled to each
    fold tree's root risk. The minimum CV error wins, ties going to the smaller tree.
    """
    if tree.is_leaf[0]:
        return tree
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=np.int64)
    n = x.shape[0]
    sequence = pruning_sequence(tree)
    alphas = np.array([a for a, _ in sequence])
    root_risk = max(float(_node_risk(tree)[0]), 1.0)
    # geometric means of consecutive alphas; the last subtree (root) is optimal beyond its alpha
    upper = np.append(alphas[1:], np.inf)
    candidates = np.where(np.isinf(upper), alphas * 2 + 1, np.sqrt(alphas * upper))

    errors = np.zeros((len(sequence), n))
    seed = int(random_state.integers(2**31 - 1)) if isinstance(random_state, np.random.Generator) else random_state
    splitter = KFold(n_splits=min(folds, n), shuffle=True, random_state=seed)
    for train, test in splitter.split(x):
        fold_tree = grow_cart(x[train], z[train], tree.params, n_classes=tree.n_classes)
        fold_sequence = pruning_sequence(fold_tree)
        # complexities are relative to the root risk, as cp is
        fold_scale = max(float(_node_risk(fold_tree)[0]), 1.0) / root_risk
        for i, alpha in enumerate(candidates * fold_scale):
            pruned = subtree(fold_tree, _optimal_at(fold_sequence, alpha))
            errors[i, test] = predict_class(pruned, x[test]) != z[test]

    xerror = errors.sum(axis=1) / root_risk
    xstd = np.sqrt(n * errors.var(axis=1)) / root_risk
    best = int(np.flatnonzero(xerror <= xerror.min() + 1e-12)[-1])
    table = _cp_rows(tree, sequence, xerror, xstd)
    result = subtree(tree, sequence[best][1])
    logger.debug(
        f"Pruned CART | leaves {tree.n_leaves} -> {result.n_leaves} | cp={table[best].cp:.4g} xerror={xerror[best]:.4f}"
    )
    return result.model_copy(update={"cp_table": table})
