"""Mini-batch k-means with explicit assign and update steps.

Centers are a (k, d) float array, assignments an int vector. The assign
step is the nearest-center rule with ties broken toward the lowest index;
the update step is either an exact per-cluster mean (full batch) or the
count-weighted streaming mean used by mini-batch k-means.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import InvalidInput

FULL_BATCH = "full_batch"
MINIBATCH_RUNNING = "minibatch_running"


def _squared_distances(features, centers):
    # explicit difference keeps distances bitwise equal to a double loop
    diff = features[:, None, :] - centers[None, :, :]
    return np.sum(diff * diff, axis=-1)


def assign_step(features, centers):
    """Assign each point to its nearest center (lowest index wins ties)."""
    features = np.asarray(features, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if features.shape[1] != centers.shape[1]:
        raise InvalidInput("feature and center dimensions differ")
    return np.argmin(_squared_distances(features, centers), axis=1)


def update_step(features, assignment, centers, mode=FULL_BATCH, counts=None):
    """Recompute centers from an assignment; returns new centers.

    FULL_BATCH sets each assigned center to the mean of its members and
    leaves empty clusters in place. MINIBATCH_RUNNING applies the streaming
    per-point rule center += (x - center) / count with per-center counts;
    pass the same counts array across batches to continue a stream.
    """
    features = np.asarray(features, dtype=np.float64)
    assignment = np.asarray(assignment)
    new_centers = np.array(centers, dtype=np.float64, copy=True)
    k = new_centers.shape[0]
    if mode == FULL_BATCH:
        for c in range(k):
            members = features[assignment == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
    elif mode == MINIBATCH_RUNNING:
        if counts is None:
            counts = np.zeros(k, dtype=np.int64)
        for x, c in zip(features, assignment):
            counts[c] += 1
            new_centers[c] += (x - new_centers[c]) / counts[c]
    else:
        raise InvalidInput(f"unknown update mode {mode!r}")
    return new_centers


def kmeans_objective(features, assignment, centers):
    """Mean squared distance of each point to its assigned center."""
    features = np.asarray(features, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    diff = features - centers[np.asarray(assignment)]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def run_minibatch_kmeans(stream, k, init="first_k", seed=0,
                         mode=MINIBATCH_RUNNING):
    """Alternate assign/update over a stream of feature batches.

    init is "first_k" (centers = first k rows of the first batch) or
    "seeded_random" (k distinct rows of the first batch drawn with the given
    seed). Returns the final centers and a per-batch objective trace, each
    trace entry evaluated on that batch with the just-updated centers.
    """
    if k < 2:
        raise InvalidInput("k must be at least 2")
    batches = iter(stream)
    try:
        first = np.asarray(next(batches), dtype=np.float64)
    except StopIteration:
        raise InvalidInput("stream yielded no batches") from None
    if init == "first_k":
        if k > first.shape[0]:
            raise InvalidInput("first batch smaller than k for first_k init")
        centers = first[:k].copy()
    elif init == "seeded_random":
        rng = np.random.default_rng(seed)
        idx = rng.choice(first.shape[0], size=k, replace=False)
        centers = first[idx].copy()
    else:
        raise InvalidInput(f"unknown init {init!r}")

    counts = np.zeros(k, dtype=np.int64)
    trace = []

    def one_batch(batch):
        nonlocal centers
        labels = assign_step(batch, centers)
        centers = update_step(batch, labels, centers, mode=mode, counts=counts)
        trace.append(kmeans_objective(batch, labels, centers))

    one_batch(first)
    for batch in batches:
        one_batch(np.asarray(batch, dtype=np.float64))
    return centers, trace


def objective_trace_csv(trace):
    """Render an objective trace as CSV with header batch,objective."""
    buf = io.StringIO()
    buf.write("batch,objective\n")
    for i, obj in enumerate(trace):
        buf.write(f"{i},{float(obj)!r}\n")
    return buf.getvalue()
