"""Plaintext ADMM for LASSO, centralized and split by column blocks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

Y_SCALINGS = ("full", "over_k")


@dataclass
class Problem:
    A: np.ndarray
    y: np.ndarray
    lam: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.A.shape[0] != self.y.size:
            raise ValueError(f"A has {self.A.shape[0]} rows but y has {self.y.size} entries")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @property
    def shape(self):
        return self.A.shape


def objective(prob: Problem, x: np.ndarray) -> float:
    r = prob.y - prob.A @ x
    return 0.5 * float(r @ r) + prob.lam * float(np.abs(x).sum())


def soft_threshold(a, kappa: float) -> np.ndarray:
    if kappa < 0:
        raise ValueError("threshold must be nonnegative")
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - kappa, 0.0)


def spd_inverse(mat: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    factor = cho_factor(mat, lower=True)
    inv = cho_solve(factor, np.eye(mat.shape[0]))
    return (inv + inv.T) / 2


def centralized_admm(prob: Problem, iters: int = 100, tol: Optional[float] = None) -> np.ndarray:
    """Iterate x, z, v from zeros; returns the x history with one row per iteration."""
    A, y, rho = prob.A, prob.y, prob.rho
    n = A.shape[1]
    factor = cho_factor(A.T @ A + rho * np.eye(n), lower=True)
    aty = A.T @ y
    z = np.zeros(n)
    v = np.zeros(n)
    hist = []
    for _ in range(iters):
        x = cho_solve(factor, aty + rho * (z - v))
        z = soft_threshold(v + x, prob.lam / rho)
        v = v + x - z
        hist.append(x)
        if tol is not None and np.linalg.norm(x - z) <= tol:
            break
    return np.array(hist)


@dataclass(frozen=True)
class NodePartition:
    widths: tuple

    @property
    def K(self) -> int:
        return len(self.widths)

    @property
    def N(self) -> int:
        return int(sum(self.widths))

    @property
    def offsets(self) -> List[int]:
        return [0] + list(np.cumsum(self.widths))

    def block(self, k: int) -> slice:
        off = self.offsets
        return slice(int(off[k]), int(off[k + 1]))

    def split(self, vec) -> List[np.ndarray]:
        vec = np.asarray(vec)
        return [vec[self.block(k)] for k in range(self.K)]


def split_problem(prob: Problem, K: int) -> NodePartition:
    n = prob.A.shape[1]
    if not 1 <= K <= n:
        raise ValueError(f"cannot split {n} columns over {K} nodes")
    base, extra = divmod(n, K)
    return NodePartition(tuple(base + 1 if k < extra else base for k in range(K)))


@dataclass
class NodeCache:
    """Per-node constants: the block inverse, its rho-scaled form and alpha."""

    A: np.ndarray
    B: np.ndarray
    B_bar: np.ndarray
    aty: np.ndarray
    alpha: np.ndarray


def node_cache(A_k: np.ndarray, y: np.ndarray, rho: float, K: int = 1,
               y_scaling: str = "full") -> NodeCache:
    if y_scaling not in Y_SCALINGS:
        raise ValueError(f"y_scaling must be one of {Y_SCALINGS}")
    target = y if y_scaling == "full" else y / K
    B = spd_inverse(A_k.T @ A_k + rho * np.eye(A_k.shape[1]))
    aty = A_k.T @ target
    return NodeCache(A_k, B, B * rho, aty, B @ aty)


def local_x_update(cache: NodeCache, z_k, v_k) -> np.ndarray:
    """x_k = B_k (A_k^T y + rho (z_k - v_k)), written as alpha + B_bar (z_k - v_k)."""
    return cache.alpha + cache.B_bar @ (np.asarray(z_k) - np.asarray(v_k))


def global_zv_update(x, v, lam: float, rho: float):
    """Shrink then take the dual step; returns (z, v)."""
    x = np.asarray(x, dtype=float)
    z = soft_threshold(v + x, lam / rho)
    return z, v + x - z


def mse(x_est, x_true) -> float:
    d = np.asarray(x_est, dtype=float) - np.asarray(x_true, dtype=float)
    return float(np.mean(d * d))


@dataclass
class DistributedAdmm:
    """Column-split ADMM where each node solves its block against the shared z, v."""

    prob: Problem
    partition: NodePartition
    y_scaling: str = "full"
    caches: List[NodeCache] = field(init=False)
    x: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    t: int = field(init=False, default=0)

    def __post_init__(self):
        A, K = self.prob.A, self.partition.K
        self.caches = [node_cache(A[:, self.partition.block(k)], self.prob.y, self.prob.rho, K,
                                  self.y_scaling) for k in range(K)]
        n = self.partition.N
        self.x, self.z, self.v = np.zeros(n), np.zeros(n), np.zeros(n)

    def step(self) -> np.ndarray:
        zs, vs = self.partition.split(self.z), self.partition.split(self.v)
        self.x = np.concatenate([local_x_update(c, zk, vk)
                                 for c, zk, vk in zip(self.caches, zs, vs)])
        self.z, self.v = global_zv_update(self.x, self.v, self.prob.lam, self.prob.rho)
        self.t += 1
        return self.x

    def run(self, iters: int = 100, tol: Optional[float] = None) -> np.ndarray:
        hist = []
        for _ in range(iters):
            hist.append(self.step().copy())
            if tol is not None and np.linalg.norm(self.x - self.z) <= tol:
                break
        return np.array(hist)


def splitting_gap(A: np.ndarray, y: np.ndarray, partition: NodePartition, x: np.ndarray) -> float:
    """sum_k ||y/K - A_k x_k||^2 - ||y - sum_k A_k x_k||^2 (can be negative)."""
    K = partition.K
    parts = [A[:, partition.block(k)] @ x[partition.block(k)] for k in range(K)]
    split = sum(float(np.sum((y / K - p) ** 2)) for p in parts)
    joint = float(np.sum((y - sum(parts)) ** 2))
    return split - joint
