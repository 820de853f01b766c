"""Black-box attack surrogate on the sphere.

A frozen linear softmax classifier plays the victim.  The attacker looks for a
single perturbation ``eps * delta`` with ``||delta|| = 1`` that makes the victim
misclassify its clients' inputs, minimising a Carlini-Wagner style loss::

    c * mean_j max(Z_y(x_j + eps delta) - max_{k != y} Z_k(x_j + eps delta), 0) + ||eps delta||^2

Only loss values are used on the optimisation path.
"""

from __future__ import annotations

import configparser
import hashlib
from importlib import resources
from pathlib import Path

import numpy as np

from ..linalg import RngStream
from ..manifolds import Sphere
from .base import Problem
from .data import load_matrix_csv, write_matrix_csv

ASSET_CONFIG = "attack.ini"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class AttackProblem(Problem):
    def __init__(self, weights, bias, inputs, labels, epsilon, c=1.0):
        self.W = np.asarray(weights, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64).reshape(-1)
        self.X = np.asarray(inputs, dtype=np.float64)
        self.y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if self.W.shape[0] != self.b.size or self.W.shape[1] != self.X.shape[1] or self.X.shape[0] != self.y.size:
            raise ValueError("inconsistent victim / input shapes")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.c = float(c)
        self.n_samples, self.d = self.X.shape
        self.manifold = Sphere(self.d, 1)

    def logits(self, inputs):
        return inputs @ self.W.T + self.b

    def predict(self, inputs):
        return np.argmax(self.logits(inputs), axis=-1)

    def _margins(self, z, labels):
        true = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
        other = np.where(np.arange(z.shape[-1]) == labels[..., None], -np.inf, z)
        k = np.argmax(other, axis=-1)
        best = np.take_along_axis(other, k[..., None], axis=-1)[..., 0]
        return true - best, k

    def loss(self, delta, indices):
        idx = np.asarray(indices)
        if idx.size == 0:
            raise IndexError("empty index set")
        pert = self.epsilon * np.asarray(delta).reshape(-1)
        marg, _ = self._margins(self.logits(self.X[idx] + pert), self.y[idx])
        return self.c * float(np.mean(np.maximum(marg, 0.0))) + float(pert @ pert)

    def loss_grad(self, delta, indices):
        idx = np.asarray(indices)
        d = np.asarray(delta).reshape(-1)
        pert = self.epsilon * d
        marg, k = self._margins(self.logits(self.X[idx] + pert), self.y[idx])
        active = (marg > 0).astype(np.float64)
        rows = (self.W[self.y[idx]] - self.W[k]) * active[:, None]
        g = self.c * self.epsilon * rows.mean(axis=0) + 2.0 * self.epsilon**2 * d
        return g.reshape(-1, 1)

    def compile(self, indices):
        idx = np.asarray(indices)
        Xs, ys = self.X[idx], self.y[idx]

        def value_batch(deltas):
            pert = self.epsilon * np.asarray(deltas)[..., 0]
            z = self.logits(Xs[None, :, :] + pert[:, None, :])
            marg, _ = self._margins(z, np.broadcast_to(ys, z.shape[:-1]))
            return self.c * np.maximum(marg, 0.0).mean(axis=1) + np.sum(pert * pert, axis=1)

        def value(delta):
            return self.loss(delta, idx)

        def grad(delta):
            return self.loss_grad(delta, idx)

        return value, grad, value_batch

    def reference_value(self, groups=None):
        # margin term vanishes once every input is misclassified
        return self.epsilon**2, False

    def success_rate(self, delta, indices=None) -> float:
        idx = np.arange(self.n_samples) if indices is None else np.asarray(indices)
        pred = self.predict(self.X[idx] + self.epsilon * np.asarray(delta).reshape(-1))
        return float(np.mean(pred != self.y[idx]))


def attack_value(prob: AttackProblem, delta_on_sphere, sample_indices):
    return prob.loss(delta_on_sphere, sample_indices)


# -- victim asset -------------------------------------------------------------


def train_victim(seed=0, d=10, n_classes=3, n_per_class=300, n_inputs=25, iters=3000, lr=0.5, l2=1e-3):
    """One-off helper: fit a softmax regression on Gaussian blobs.

    Returns ``(W, b, inputs, labels)`` where ``inputs`` are fresh class-0 draws
    the victim classifies correctly.
    """
    gen = RngStream(seed, (11,)).generator()
    means = 2.0 * gen.standard_normal((n_classes, d))
    X = np.concatenate([means[k] + gen.standard_normal((n_per_class, d)) for k in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class)
    Y = np.eye(n_classes)[y]
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    for _ in range(iters):
        z = X @ W.T + b
        z -= z.max(axis=1, keepdims=True)
        P = np.exp(z)
        P /= P.sum(axis=1, keepdims=True)
        R = (P - Y) / len(y)
        W -= lr * (R.T @ X + l2 * W)
        b -= lr * R.sum(axis=0)
    inputs = []
    while len(inputs) < n_inputs:
        cand = means[0] + gen.standard_normal(d)
        if np.argmax(W @ cand + b) == 0:
            inputs.append(cand)
    return W, b, np.array(inputs), np.zeros(n_inputs, dtype=np.int64)


def write_victim_asset(directory, W, b, inputs, labels, epsilon, c=1.0, rounds=200, run=None):
    """Write the victim, its inputs and ``attack.ini``.

    ``run`` holds the federated settings epsilon was tuned with (stored as the
    ``[run]`` section).
    """
    directory = Path(directory)
    d = W.shape[1]
    wpath = directory / "victim_weights.csv"
    ipath = directory / "attack_inputs.csv"
    write_matrix_csv(wpath, np.column_stack([W, b]), header=[f"w_{i}" for i in range(d)] + ["bias"])
    write_matrix_csv(ipath, np.column_stack([inputs, labels]), header=[f"x_{i}" for i in range(d)] + ["label"])
    cfg = configparser.ConfigParser()
    cfg["victim"] = {
        "weights": wpath.name,
        "shape": f"{W.shape[0]}x{d + 1}",
        "layout": "rows = classes; columns = feature weights then bias",
        "sha256": file_sha256(wpath),
    }
    cfg["inputs"] = {"file": ipath.name, "shape": f"{inputs.shape[0]}x{d + 1}", "sha256": file_sha256(ipath)}
    cfg["attack"] = {"epsilon": repr(float(epsilon)), "c": repr(float(c)), "rounds": str(rounds)}
    if run:
        cfg["run"] = {k: str(v) for k, v in run.items()}
    with open(directory / ASSET_CONFIG, "w", encoding="utf-8") as fh:
        cfg.write(fh)


def _asset_dir():
    return Path(str(resources.files("zorfl") / "problems" / "assets"))


def load_victim_asset(directory=None, epsilon=None, c=None) -> AttackProblem:
    """Load the frozen victim, verifying shapes and content hashes."""
    directory = Path(directory) if directory is not None else _asset_dir()
    cfg = configparser.ConfigParser()
    if not cfg.read(directory / ASSET_CONFIG, encoding="utf-8"):
        raise FileNotFoundError(directory / ASSET_CONFIG)
    wpath = directory / cfg["victim"]["weights"]
    ipath = directory / cfg["inputs"]["file"]
    for path, sec in ((wpath, "victim"), (ipath, "inputs")):
        if file_sha256(path) != cfg[sec]["sha256"]:
            raise ValueError(f"{path}: content hash mismatch; asset was modified")
    Wb = load_matrix_csv(wpath)
    rows, cols = (int(v) for v in cfg["victim"]["shape"].split("x"))
    if Wb.shape != (rows, cols):
        raise ValueError(f"{wpath}: shape {Wb.shape} does not match header {rows}x{cols}")
    Xy = load_matrix_csv(ipath)
    eps = float(cfg["attack"]["epsilon"]) if epsilon is None else float(epsilon)
    cc = float(cfg["attack"]["c"]) if c is None else float(c)
    return AttackProblem(Wb[:, :-1], Wb[:, -1], Xy[:, :-1], Xy[:, -1].astype(np.int64), eps, cc)


def attack_run_settings(directory=None) -> dict:
    """The ``[attack]`` and ``[run]`` sections of the asset config, as strings."""
    directory = Path(directory) if directory is not None else _asset_dir()
    cfg = configparser.ConfigParser()
    if not cfg.read(directory / ASSET_CONFIG, encoding="utf-8"):
        raise FileNotFoundError(directory / ASSET_CONFIG)
    out = dict(cfg["attack"])
    if cfg.has_section("run"):
        out.update(cfg["run"])
    return out
