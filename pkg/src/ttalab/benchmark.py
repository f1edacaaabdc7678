"""Synthetic signal benchmark: dataset generation, corruptions, source
training, and the one-pass streaming evaluation protocol.

Signals live on a 32-point grid. Each class is a smooth double-bump template
that is symmetric under reversal, so the flip augmentation used by the
adaptation strategies is label-preserving by construction (the analogue of a
horizontal flip on natural images). Corruptions are toy analogues of the
usual image benchmark taxonomy with severity levels 1..5.
"""

from __future__ import annotations

import copy as _copy
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .adaptation import Adapter, flip_signal, make_optimizer
from .errors import InvalidInput, TrainingDiverged
from .network import (BNMode, all_params, backward_all, forward,
                      make_network, network_to_dict)
from .numeric import softmax

SIGNAL_LENGTH = 32
NOISE_SIGMA = 0.1

CORRUPTION_KINDS = ("gaussian_noise", "impulse_noise", "smooth_blur",
                    "contrast", "brightness")

# Severity scaling constants, one entry per kind.
GAUSSIAN_SIGMA_PER_LEVEL = 0.1
IMPULSE_PROB_PER_LEVEL = 0.03
CONTRAST_LOSS_PER_LEVEL = 0.15
BRIGHTNESS_PER_LEVEL = 0.2


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class SignalDataset:
    inputs: np.ndarray   # (m, SIGNAL_LENGTH)
    labels: np.ndarray   # (m,) int
    seed: int

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def __len__(self):
        return self.inputs.shape[0]


def class_templates(k, length=SIGNAL_LENGTH, width=1.2, amplitude=0.3,
                    baseline=1.0):
    """Flip-symmetric class templates: a baseline plus a bump and its mirror.

    Bump centers are evenly spaced over the left half of the grid, so the
    mirror pair makes every template exactly symmetric under reversal. The
    amplitude keeps classes well separated against the base noise (pairwise
    distance a few times beyond 5 sigma) while leaving severity-5
    corruptions enough room to actually hurt. The constant baseline gives
    the signals a nonzero mean, so zero-mean corruptions such as impulse
    noise shift the input statistics the way real covariate shift does.
    """
    if k < 2:
        raise InvalidInput("k must be at least 2")
    grid = np.arange(length, dtype=np.float64)
    lo, hi = 2.0, 13.5
    positions = np.linspace(lo, hi, k)
    templates = np.empty((k, length))
    for c, pos in enumerate(positions):
        bump = np.exp(-((grid - pos) ** 2) / (2.0 * width ** 2))
        # adding the reversed bump keeps the template symmetric bit for bit
        templates[c] = baseline + amplitude * (bump + bump[::-1])
    return templates


def generate_dataset(k, m, seed, noise_sigma=NOISE_SIGMA):
    """Balanced noisy-template dataset; bit-identical for a given seed."""
    if k < 2:
        raise InvalidInput("k must be at least 2")
    if m < k:
        raise InvalidInput("need at least one sample per class")
    rng = np.random.default_rng(seed)
    templates = class_templates(k)
    counts = np.full(k, m // k)
    counts[: m % k] += 1
    labels = np.repeat(np.arange(k), counts)
    inputs = templates[labels] + rng.normal(0.0, noise_sigma, size=(m, SIGNAL_LENGTH))
    order = rng.permutation(m)
    return SignalDataset(inputs=inputs[order], labels=labels[order], seed=seed)


# ---------------------------------------------------------------------------
# corruptions
# ---------------------------------------------------------------------------

@dataclass
class Corruption:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise InvalidInput(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise InvalidInput("severity must be in 1..5")


def apply_corruption(x, corruption, seed):
    """Corrupt a signal or a batch of signals; deterministic given seed.

    Severity table: gaussian noise sigma = 0.1 s; impulse sets each
    coordinate to +-1 with probability 0.03 s; blur = moving average of
    window 2s+1 (reflect boundary); contrast scales deviations from the
    per-signal mean by (1 - 0.15 s); brightness adds 0.2 s.
    """
    x = np.asarray(x, dtype=np.float64)
    s = corruption.severity
    rng = np.random.default_rng(seed)
    if corruption.kind == "gaussian_noise":
        return x + rng.normal(0.0, GAUSSIAN_SIGMA_PER_LEVEL * s, size=x.shape)
    if corruption.kind == "impulse_noise":
        hit = rng.random(x.shape) < IMPULSE_PROB_PER_LEVEL * s
        signs = rng.choice([-1.0, 1.0], size=x.shape)
        return np.where(hit, signs, x)
    if corruption.kind == "smooth_blur":
        return uniform_filter1d(x, size=2 * s + 1, axis=-1, mode="reflect")
    if corruption.kind == "contrast":
        mean = x.mean(axis=-1, keepdims=True)
        return mean + (x - mean) * (1.0 - CONTRAST_LOSS_PER_LEVEL * s)
    if corruption.kind == "brightness":
        return x + BRIGHTNESS_PER_LEVEL * s
    raise InvalidInput(f"unknown corruption kind {corruption.kind!r}")


# ---------------------------------------------------------------------------
# source training
# ---------------------------------------------------------------------------

def train_source(dataset, epochs, seed, lr=1e-2, batch_size=64, hidden=64,
                 flip_prob=0.5):
    """Train the canonical network on a clean dataset with random flips.

    Uses Adam on all parameters with BN in training mode, so running
    statistics are populated. Raises TrainingDiverged on a non-finite loss.
    """
    k = dataset.num_classes
    net = make_network(input_dim=dataset.inputs.shape[1], hidden=hidden,
                       k=k, seed=seed)
    optimizer = make_optimizer("adam", lr)
    rng = np.random.default_rng(seed)
    m = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue  # BN batch statistics need two samples
            x = dataset.inputs[idx]
            y = dataset.labels[idx]
            flips = rng.random(len(idx)) < flip_prob
            if flips.any():
                x = x.copy()
                x[flips] = flip_signal(x[flips])
            try:
                logits, cache = forward(net, x, BNMode.TRAIN_STATS)
            except InvalidInput as e:
                raise TrainingDiverged(f"forward blew up: {e}") from None
            p = softmax(logits)
            loss = -np.mean(np.log(p[np.arange(len(idx)), y]))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss}")
            grad = p.copy()
            grad[np.arange(len(idx)), y] -= 1.0
            grad /= len(idx)
            grads = backward_all(net, cache, grad)
            optimizer.step(all_params(net), grads)
    net.meta = {"seed": seed, "trained_epochs": epochs}
    return net


def evaluate_accuracy(net, dataset, mode=BNMode.EVAL_STATS):
    """Plain accuracy of the network on a dataset, no adaptation."""
    logits, _ = forward(net, dataset.inputs, mode)
    return accuracy_score(np.argmax(logits, axis=1), dataset.labels)


def accuracy_score(predictions, labels):
    """Fraction of predictions matching labels."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InvalidInput("predictions and labels differ in length")
    if predictions.size == 0:
        raise InvalidInput("cannot score an empty prediction set")
    return float(np.mean(predictions == labels))


# ---------------------------------------------------------------------------
# streaming protocol
# ---------------------------------------------------------------------------

@dataclass
class StreamProtocol:
    batch_size: int = 100
    seed: int = 0
    one_pass: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be positive")
        if not self.one_pass:
            raise InvalidInput("only the one-pass protocol is supported")


@dataclass
class RunReport:
    strategy: str
    corruption: str
    severity: int
    seed: int
    n_test: int
    accuracy: float
    per_batch_accuracy: list
    config: dict
    params_digest: str
    predictions: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "strategy": self.strategy,
            "corruption": self.corruption,
            "severity": self.severity,
            "seed": self.seed,
            "n_test": self.n_test,
            "accuracy": self.accuracy,
            "per_batch_accuracy": self.per_batch_accuracy,
            "config": self.config,
            "params_digest": self.params_digest,
        }

    def json_str(self):
        return json.dumps(self.to_json(), sort_keys=True) + "\n"

    def per_batch_csv(self):
        buf = io.StringIO()
        buf.write("batch,accuracy\n")
        for i, acc in enumerate(self.per_batch_accuracy):
            buf.write(f"{i},{acc!r}\n")
        return buf.getvalue()


def params_digest(net):
    doc = json.dumps(network_to_dict(net), sort_keys=True)
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def stream_eval(net, dataset, corruption, protocol, config):
    """One pass over a (possibly corrupted) test stream with adaptation.

    The network is copied, never mutated in place. Accuracy counts the
    predictions each adapt_batch call returns, which precede any parameter
    update triggered by that same batch.
    """
    report, _ = adapt_over_stream(net, dataset, corruption, protocol, config)
    return report


def adapt_over_stream(net, dataset, corruption, protocol, config):
    """stream_eval variant that also returns the adapted network copy."""
    work = _copy.deepcopy(net)
    inputs = dataset.inputs
    if corruption is not None:
        inputs = apply_corruption(inputs, corruption, protocol.seed)
    m = len(dataset)
    order = np.random.default_rng(protocol.seed).permutation(m)
    adapter = Adapter(work, config, batch_size=protocol.batch_size,
                      aug=flip_signal)
    predictions = np.empty(m, dtype=np.int64)
    per_batch = []
    seen = 0
    for start in range(0, m, protocol.batch_size):
        idx = order[start:start + protocol.batch_size]
        preds, _ = adapter.adapt_batch(inputs[idx])
        predictions[idx] = preds
        per_batch.append(accuracy_score(preds, dataset.labels[idx]))
        seen += len(idx)
    assert seen == m  # one-pass guarantee
    report = RunReport(
        strategy=config.strategy,
        corruption=corruption.kind if corruption is not None else "none",
        severity=corruption.severity if corruption is not None else 0,
        seed=protocol.seed,
        n_test=m,
        accuracy=accuracy_score(predictions, dataset.labels),
        per_batch_accuracy=per_batch,
        config=config.to_json(),
        params_digest=params_digest(work),
        predictions=predictions,
        labels=dataset.labels.copy(),
    )
    return report, work


# ---------------------------------------------------------------------------
# feature density comparison
# ---------------------------------------------------------------------------

def collect_features(net, inputs, batch_size, mode):
    """Penultimate features over a stream of batches, stacked (m, feature_dim)."""
    from .network import penultimate_features

    chunks = []
    for start in range(0, inputs.shape[0], batch_size):
        chunks.append(penultimate_features(net, inputs[start:start + batch_size], mode))
    return np.vstack(chunks)


def feature_histograms(features_by_name, bins=64):
    """Per-channel normalized histograms over a range shared by all inputs.

    Returns (edges, hists) where edges is (channels, bins+1) and hists maps
    each name to a (channels, bins) array of densities summing to 1 per
    channel.
    """
    names = list(features_by_name)
    stacked = np.vstack([features_by_name[n] for n in names])
    channels = stacked.shape[1]
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)  # degenerate constant channel
    edges = np.linspace(lo, hi, bins + 1).T  # (channels, bins+1)
    hists = {n: np.empty((channels, bins)) for n in names}
    for ch in range(channels):
        for n in names:
            counts, _ = np.histogram(features_by_name[n][:, ch], bins=edges[ch])
            total = counts.sum()
            hists[n][ch] = counts / total if total else counts
    return edges, hists


def histogram_overlap(h1, h2):
    """Overlap coefficient of two normalized histograms: sum of bin minima."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise InvalidInput("histograms differ in shape")
    return float(np.minimum(h1, h2).sum())
