"""Hand-built forests and brute-force oracles shared by the tests."""

import numpy as np

from gapforest.forest import Forest, ForestParams

# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def hand_forest(trees, multiplicities, lower, upper, mode="uniform-discriminator"):
    """Assemble a Forest from per-tree node lists.

    Each tree is a list of nodes ``(feature, threshold, left, right, n_real, n_synth)``
    with tree-local child indices; leaves use feature -1.
    """
    feature, threshold, left, right, n_real, n_synth, depth, offsets = [], [], [], [], [], [], [], [0]
    for nodes in trees:
        d = np.zeros(len(nodes), dtype=np.int32)
        for k, (f, thr, lc, rc, r, s) in enumerate(nodes):
            feature.append(f)
            threshold.append(thr)
            left.append(lc)
            right.append(rc)
            n_real.append(r)
            n_synth.append(s)
            if f >= 0:
                d[lc] = d[rc] = d[k] + 1
        depth.extend(d)
        offsets.append(offsets[-1] + len(nodes))
    mult = np.asarray(multiplicities, dtype=np.int32)
    lower = np.asarray(lower, dtype=float)
    params = ForestParams(n_trees=len(trees), min_leaf=1, max_depth=None, mtry=lower.size)
    return Forest(
        mode, params, tuple(f"x{k}" for k in range(lower.size)),
        offsets=np.asarray(offsets, dtype=np.int64),
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        missing_left=np.ones(len(feature), dtype=np.uint8),
        depth=np.asarray(depth, dtype=np.int32),
        n_real=np.asarray(n_real, dtype=float),
        n_synth=np.asarray(n_synth, dtype=float),
        multiplicities=mult,
        root_lower=lower,
        root_upper=np.asarray(upper, dtype=float),
    )


def leaf(n_real=0.0, n_synth=0.0):
    return (-1, 0.0, -1, -1, n_real, n_synth)


def split(feature, threshold, n_real=0.0, n_synth=0.0, left=1, right=2):
    return (feature, threshold, left, right, n_real, n_synth)


def brute_force_proximity(forest, X):
    """Direct evaluation of the GAP proximity, one (i, j, tree) triple at a time."""
    leaves = forest.apply(X)
    mult = forest.multiplicities
    n, T = leaves.shape
    P = np.zeros((n, n))
    S = np.zeros(n)
    for i in range(n):
        for t in range(T):
            if mult[i, t]:
                continue
            mates = [j for j in range(n) if leaves[j, t] == leaves[i, t]]
            total = sum(mult[j, t] for j in mates)
            if total == 0:
                continue
            S[i] += 1
            for j in mates:
                P[i, j] += mult[j, t] / total
    return P / np.maximum(S, 1)[:, None], S
