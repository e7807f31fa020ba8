"""Experiment runner: synthetic data, metrics and CSV/JSON emission.

Every runner returns a mapping of table name to rows (lists of dicts).  With
``Experiment.out`` set the tables are written as one CSV each next to a JSON
manifest holding the exact configuration.
"""
from __future__ import annotations

import csv
import json
import math
import random
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from . import __version__
from . import paillier as pl
from .admm import (DistributedAdmm, Problem, centralized_admm, mse, split_problem)
from .protocol import SessionConfig, quantized_reference, run_session
from .quantize import DEFAULT_DELTA, QuantSpec, plaintext_bound
from .transport import LatencyModel, make_network

KINDS = ("quant_loss", "mse_compare", "sparsity_sweep", "throughput", "latency", "power_grid")
BENCH_OPS = ("ModMult", "ModExp", "EP", "EP_CRT")
CENTRAL_MAX_COLUMNS = 20_000  # dense N x N factorization beyond this is refused

KIND_DEFAULTS = {
    "quant_loss": {"M": 3, "N": 3, "K": 3, "iters": 20, "margin": 1.05, "trials": 10},
    "sparsity_sweep": {"iters": 50},
    "latency": {"M": 30, "N": 60, "iters": 10, "key_bits": 1024},
    "power_grid": {"K": 1, "iters": 50, "key_bits": 256},
}

Rows = List[dict]
Tables = Dict[str, Rows]


class InfeasibleConfigError(ValueError):
    pass


class DegenerateLabelsError(ValueError):
    pass


# ------------------------------------------------------------------- config

@dataclass
class Experiment:
    """One run of the harness.  ``density`` is the nonzero fraction of x_true."""

    kind: str
    M: int = 100
    N: int = 900
    K: int = 3
    density: float = 0.1
    delta: int = DEFAULT_DELTA
    key_bits: int = 2048
    seed: int = 0
    out: Optional[str] = None
    iters: int = 100
    variant: str = "basic"
    carrier: str = "sim"
    backend: str = "native"
    margin: float = 1.5
    # encrypted iterations for mse_compare: None runs all, 0 skips encryption
    encrypted_iters: Optional[int] = None
    deltas: Tuple[int, ...] = tuple(10 ** e for e in (5, 7, 9, 11, 13, 15))
    densities: Tuple[float, ...] = (0.9, 0.5, 0.1)
    node_counts: Tuple[int, ...] = (3, 10)
    trials: int = 3
    key_sizes: Tuple[int, ...] = (1024, 2048, 4096)
    ops: Tuple[str, ...] = BENCH_OPS
    n_samples: int = 20
    repeats: int = 10
    delay_ms: float = 10.0
    jitter_ms: float = 0.0
    buses: int = 64
    avg_degree: int = 4
    data_ratios: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    noise_std: float = 0.0
    encrypt_grid: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if min(self.M, self.N, self.K, self.iters) < 1:
            raise ValueError("dims and iteration count must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        for name in ("deltas", "densities", "node_counts", "key_sizes", "ops", "data_ratios"):
            setattr(self, name, tuple(getattr(self, name)))
        self.delta = int(self.delta)
        bad = set(self.ops) - set(BENCH_OPS)
        if bad:
            raise ValueError(f"unknown benchmark ops {sorted(bad)}")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "Experiment":
        """Desk-scale defaults for each kind, then ``overrides``."""
        return cls(**{"kind": kind, **KIND_DEFAULTS.get(kind, {}), **overrides})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "Experiment":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**data)


# --------------------------------------------------------------- generators

def _nonzero_count(density: float, n: int) -> int:
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    count = math.ceil(round(density * n, 9))
    if count < 1:
        raise ValueError("density * N must be at least 1")
    return count


def gen_gaussian_problem(M: int, N: int, density: float, seed: int,
                         lam: float = 1.0, rho: float = 1.0) -> Tuple[Problem, np.ndarray]:
    """Standard-normal A, x_true with ceil(density*N) standard-normal nonzeros, y = A x_true."""
    count = _nonzero_count(density, N)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, N))
    x_true = np.zeros(N)
    support = rng.choice(N, size=count, replace=False)
    x_true[support] = rng.standard_normal(count)
    return Problem(A, A @ x_true, lam, rho), x_true


def column_correlation_variance(A: np.ndarray) -> float:
    """Mean of (a_i . a_j / M)^2 over distinct columns; about 1/M for Gaussian A."""
    A = np.asarray(A, dtype=float)
    gram = A.T @ A / A.shape[0]
    iu = np.triu_indices(gram.shape[0], 1)
    return float(np.mean(gram[iu] ** 2))


@dataclass
class GridInstance:
    """Resistive network: bus currents are conductance-weighted voltage differences.

    Row ``i`` of ``conductance`` is the adjacency vector of bus ``i``; the LASSO
    for that bus regresses its currents on its voltage differences to every
    other bus.
    """

    conductance: np.ndarray
    voltages: np.ndarray
    phis: List[np.ndarray]
    currents: List[np.ndarray]
    others: List[np.ndarray]

    @property
    def N(self) -> int:
        return self.conductance.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self.conductance > 0


def gen_power_grid(N_buses: int, avg_degree: int, M_samples: int, seed: int,
                   rewire: float = 0.2, noise_std: float = 0.0,
                   max_tries: int = 100) -> GridInstance:
    if N_buses < 4:
        raise ValueError("need at least 4 buses")
    if avg_degree < 2 or avg_degree >= N_buses:
        raise ValueError("avg_degree must be in [2, N_buses)")
    if M_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        g = nx.watts_strogatz_graph(N_buses, avg_degree, rewire, seed=seed * max_tries + attempt)
        if nx.is_connected(g):
            break
    else:
        raise RuntimeError("could not draw a connected topology")
    cond = np.zeros((N_buses, N_buses))
    for i, j in sorted(g.edges):
        cond[i, j] = cond[j, i] = rng.uniform(1.0, 3.0)
    volts = rng.standard_normal((M_samples, N_buses))
    phis, currents, others = [], [], []
    for i in range(N_buses):
        rest = np.array([j for j in range(N_buses) if j != i])
        phi = volts[:, [i]] - volts[:, rest]
        cur = phi @ cond[i, rest]
        if noise_std:
            cur = cur + noise_std * rng.standard_normal(M_samples)
        phis.append(phi)
        currents.append(cur)
        others.append(rest)
    return GridInstance(cond, volts, phis, currents, others)


# ------------------------------------------------------------------ metrics

def _check_labels(labels, need_negative: bool) -> np.ndarray:
    lab = np.asarray(labels).astype(bool)
    if lab.ndim != 1 or lab.size == 0:
        raise DegenerateLabelsError("labels must be a nonempty vector")
    if not lab.any():
        raise DegenerateLabelsError("no positive labels")
    if need_negative and lab.all():
        raise DegenerateLabelsError("no negative labels")
    return lab


def _ranked_counts(scores, lab: np.ndarray):
    s = np.asarray(scores, dtype=float)
    if s.shape != lab.shape:
        raise ValueError("scores and labels differ in length")
    order = np.argsort(-s, kind="mergesort")
    s, lab = s[order], lab[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]  # end of each tie group
    tp = np.cumsum(lab)[last]
    fp = (last + 1) - tp
    return tp.astype(float), fp.astype(float)


def auroc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; ties form one diagonal segment."""
    lab = _check_labels(labels, need_negative=True)
    tp, fp = _ranked_counts(scores, lab)
    tpr = np.r_[0.0, tp / lab.sum()]
    fpr = np.r_[0.0, fp / (~lab).sum()]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def auprc(scores, labels) -> float:
    """Step-interpolated area under precision-recall: sum of precision times recall gain."""
    lab = _check_labels(labels, need_negative=False)
    tp, fp = _ranked_counts(scores, lab)
    recall = np.r_[0.0, tp / lab.sum()]
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(recall) * precision))


def edge_scores(estimate: np.ndarray, grid: GridInstance) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetrized |estimate| per unordered bus pair, with true-line labels."""
    mag = np.abs(estimate)
    sym = (mag + mag.T) / 2
    iu = np.triu_indices(grid.N, 1)
    return sym[iu], grid.adjacency[iu]


# ------------------------------------------------------------ session glue

def make_keys(bits: int, seed: int) -> pl.Keypair:
    """Deterministic keys for a seed; sizes outside the standard set are for tests."""
    return pl.keygen(bits, random.Random(f"{seed}:keys"), strict=False)


def plaintext_trajectory(prob: Problem, K: int, iters: int, y_scaling: str = "full"):
    """Float distributed run, returning (x history, everything the quantizers see)."""
    run = DistributedAdmm(prob, split_problem(prob, K), y_scaling)
    seen = [np.concatenate([c.B_bar.ravel() for c in run.caches]),
            np.concatenate([c.alpha for c in run.caches]), np.zeros(1)]
    hist = []
    for _ in range(iters):
        hist.append(run.step().copy())
        seen += [run.z, -run.v]
    return np.array(hist), np.concatenate(seen)


def fit_delta(n: int, z_min: float, z_max: float, block: int, ceiling: int = DEFAULT_DELTA) -> int:
    """Largest power of ten (at most ``ceiling``) whose update plaintexts stay below ``n``."""
    delta = ceiling
    while delta > 1 and plaintext_bound(QuantSpec(delta, z_min, z_max), block) >= n:
        delta //= 10
    if plaintext_bound(QuantSpec(delta, z_min, z_max), block) >= n:
        raise InfeasibleConfigError("modulus too small for any quantization scale")
    return delta


def session_config(prob: Problem, K: int, iters: int, delta: int, key_bits: int,
                   margin: float, variant: str = "basic") -> SessionConfig:
    _, seen = plaintext_trajectory(prob, K, iters)
    spec = QuantSpec.around(seen, delta, margin)
    # master steps encrypt/decrypt every coordinate; keep the failure timeout above that
    timeout = 30.0 + 0.05 * prob.A.shape[1] * (key_bits / 1024) ** 3
    return SessionConfig(K, key_bits, delta, spec.z_min, spec.z_max, prob.rho, prob.lam,
                         iters, "collaborative" if variant in ("collab", "collaborative") else "basic",
                         timeout=timeout)


def fit_config(cfg: SessionConfig, prob: Problem, keys: pl.Keypair) -> SessionConfig:
    """Shrink delta to a power of ten that fits a small test modulus, if needed."""
    block = max(split_problem(prob, cfg.K).widths)
    if plaintext_bound(cfg.spec, block) < keys.public.n:
        return cfg
    delta = fit_delta(keys.public.n, cfg.z_min, cfg.z_max, block, cfg.delta)
    return SessionConfig(**{**asdict(cfg), "delta": delta})


# ------------------------------------------------------------------ runners

def run_quant_loss(exp: Experiment) -> Tables:
    """Mean |x_quantized - x_float| over iterations, elements and instances, per delta.

    Quantization bounds hug each instance's plaintext trajectory (``margin``).
    """
    K = min(exp.K, exp.N)
    cases = []
    for trial in range(exp.trials):
        prob, _ = gen_gaussian_problem(exp.M, exp.N, 1.0, exp.seed * 1000 + trial)
        hist, seen = plaintext_trajectory(prob, K, exp.iters)
        cases.append((prob, hist, seen))
    rows = []
    for delta in exp.deltas:
        gaps, clamped = [], 0
        for prob, hist, seen in cases:
            spec = QuantSpec.around(seen, delta, exp.margin)
            cfg = SessionConfig(K, exp.key_bits, delta, spec.z_min, spec.z_max, prob.rho,
                                prob.lam, exp.iters)
            ref = quantized_reference(prob, cfg)
            gaps.append(np.abs(ref.history - hist))
            clamped += ref.clamps.clamped
        gap = np.concatenate([g.ravel() for g in gaps])
        target = 1 / (10 * delta)
        rows.append({"delta": delta, "loss_mean": float(gap.mean()), "loss_max": float(gap.max()),
                     "reference": target, "ratio": float(gap.mean()) / target,
                     "scaled_loss": float(gap.mean()) * delta, "clamped": clamped})
    return {"quant_loss": rows}


def run_mse_compare(exp: Experiment) -> Tables:
    if exp.N > CENTRAL_MAX_COLUMNS:
        raise InfeasibleConfigError(f"centralized baseline refuses N > {CENTRAL_MAX_COLUMNS}")
    prob, x_true = gen_gaussian_problem(exp.M, exp.N, exp.density, exp.seed)
    central = centralized_admm(prob, exp.iters)
    dist, _ = plaintext_trajectory(prob, exp.K, exp.iters)
    cfg = session_config(prob, exp.K, exp.iters, exp.delta, exp.key_bits, exp.margin, exp.variant)
    keys = make_keys(exp.key_bits, exp.seed)
    cfg = fit_config(cfg, prob, keys)
    ref = quantized_reference(prob, cfg, keys.public.n)
    enc_iters = exp.iters if exp.encrypted_iters is None else min(exp.encrypted_iters, exp.iters)
    enc = None
    if enc_iters:
        enc_cfg = SessionConfig(**{**asdict(cfg), "iter_max": enc_iters})
        net = make_network(exp.carrier, exp.K, seed=exp.seed)
        try:
            enc = run_session(prob, enc_cfg, keys, net, exp.seed, exp.backend)
        finally:
            net.close()
    rows = []
    for t in range(exp.iters):
        row = {"t": t + 1, "centralized": mse(central[min(t, len(central) - 1)], x_true),
               "distributed": mse(dist[t], x_true), "quantized": mse(ref.history[t], x_true),
               "encrypted": mse(enc.history[t], x_true) if enc is not None and t < enc_iters else ""}
        rows.append(row)
    last = enc_iters - 1 if enc is not None else exp.iters - 1
    x_cmp = enc.history[last] if enc is not None else ref.history[last]
    summary = {
        "iterations": exp.iters, "encrypted_iterations": enc_iters, "delta": cfg.delta,
        "key_bits": keys.public.key_bits, "z_min": cfg.z_min, "z_max": cfg.z_max,
        "mse_gap": abs(mse(x_cmp, x_true) - mse(dist[last], x_true)),
        "max_x_gap": float(np.max(np.abs(x_cmp - dist[last]))),
        "integer_path_equal": (enc is not None and enc.q_history == ref.q_history[:enc_iters]),
        "reference_mse_gap": abs(mse(ref.history[-1], x_true) - mse(dist[-1], x_true)),
        "reference_max_x_gap": float(np.max(np.abs(ref.history[-1] - dist[-1]))),
        "clamped": ref.clamps.clamped,
    }
    tables = {"mse": rows, "mse_summary": [summary]}
    if enc is not None:
        tables["ops"] = [{"t": t + 1, **counts, "cost": cost}
                         for t, (counts, cost) in enumerate(enc.op_history)]
    return tables


def run_sparsity_sweep(exp: Experiment) -> Tables:
    """Plaintext distributed MSE at the final iteration, averaged over trials."""
    rows = []
    for K in exp.node_counts:
        for density in exp.densities:
            vals = []
            for trial in range(exp.trials):
                prob, x_true = gen_gaussian_problem(exp.M, exp.N, density, exp.seed * 1000 + trial)
                hist, _ = plaintext_trajectory(prob, K, exp.iters)
                vals.append(mse(hist[-1], x_true))
            rows.append({"K": K, "sparsity": round(1 - density, 9), "density": density,
                         "iteration": exp.iters, "mse": float(np.mean(vals)),
                         "mse_std": float(np.std(vals))})
    return {"sparsity_sweep": rows}


def throughput_bench(key_bits: int, op: str, n_samples: int, repeats: int = 10,
                     seed: int = 0, backend: str = "native",
                     keys: Optional[pl.Keypair] = None) -> dict:
    """Operations per second modulo n^2 on random plaintexts in [0, n)."""
    if op not in BENCH_OPS:
        raise ValueError(f"op must be one of {BENCH_OPS}")
    keys = keys if keys is not None else make_keys(key_bits, seed)
    pk, sk, crt = keys
    rng = random.Random(f"{seed}:bench:{op}")
    eng = pl.PowEngine(backend)
    n, n2 = pk.n, pk.n2
    ms = [rng.randrange(n) for _ in range(n_samples)]
    others = [rng.randrange(n2) for _ in range(n_samples)]
    rs = [pl.random_unit(n, rng) for _ in range(n_samples)]
    if op == "ModMult":
        def body():
            for a, b in zip(ms, others):
                a * b % n2
    elif op == "ModExp":
        def body():
            for a, e in zip(others, ms):
                eng.pow(a, e, n2)
    elif op == "EP":
        def body():
            for m, r in zip(ms, rs):
                pl.encrypt(m, pk, r=r, engine=eng)
    else:
        def body():
            for m, r in zip(ms, rs):
                pl.crt_encrypt(m, pk, sk, crt, r=r, engine=eng)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        body()
        times.append(time.perf_counter() - start)
    mean = statistics.fmean(times)
    return {"key_bits": key_bits, "op": op, "n_samples": n_samples, "repeats": repeats,
            "mean_seconds": mean, "stdev_seconds": statistics.pstdev(times),
            "ops_per_sec": n_samples / mean}


def run_throughput(exp: Experiment) -> Tables:
    rows = []
    for bits in exp.key_sizes:
        keys = make_keys(bits, exp.seed)
        for op in exp.ops:
            # a single multiply is too quick to time in small batches
            count = exp.n_samples * 100 if op == "ModMult" else exp.n_samples
            rows.append(throughput_bench(bits, op, count, exp.repeats, exp.seed, exp.backend, keys))
    return {"throughput": rows}


def run_latency(exp: Experiment) -> Tables:
    """Sessions on a delayed carrier; per-iteration phase times and wait spreads."""
    it_rows, summary = [], []
    for K in exp.node_counts:
        prob, _ = gen_gaussian_problem(exp.M, exp.N, exp.density, exp.seed)
        cfg = session_config(prob, K, exp.iters, exp.delta, exp.key_bits, exp.margin, exp.variant)
        keys = make_keys(exp.key_bits, exp.seed)
        cfg = fit_config(cfg, prob, keys)
        net = make_network(exp.carrier, K, LatencyModel(exp.delay_ms, exp.jitter_ms), exp.seed)
        try:
            res = run_session(prob, cfg, keys, net, exp.seed, exp.backend)
        finally:
            net.close()
        tr = res.trace
        for it in tr.iterations:
            waits = it.edge_wait
            it_rows.append({"K": K, "t": it.t, "local": it.local, "comm": it.comm,
                            "master_wait": it.master_wait,
                            "edge_wait_max": max(waits) if waits else 0.0,
                            "edge_wait_rounds": ";".join(f"{w:.6f}" for w in waits)})
        accounted = tr.accounted_total()
        local = sum(it.local for it in tr.iterations)
        comm = sum(it.comm for it in tr.iterations)
        n_it = len(tr.iterations)
        summary.append({"K": K, "variant": cfg.variant, "delay_ms": exp.delay_ms,
                        "iterations": n_it, "T_pre": tr.t_pre, "T_loc_mean": local / n_it,
                        "T_comm_mean": comm / n_it, "T_total": tr.t_total,
                        "T_model": tr.t_pre + (local / n_it + comm / n_it) * n_it,
                        "accounted": accounted,
                        "relative_error": abs(tr.t_total - accounted) / tr.t_total})
    return {"latency_iterations": it_rows, "latency_summary": summary}


def reconstruct(grid: GridInstance, K: int = 1, iters: int = 50, lam: float = 1.0,
                rho: float = 1.0, encrypted: bool = False, key_bits: int = 256,
                delta: int = DEFAULT_DELTA, margin: float = 1.5, seed: int = 0,
                keys: Optional[pl.Keypair] = None, backend: str = "native") -> np.ndarray:
    """Per-bus LASSO estimates of the adjacency rows (zero diagonal)."""
    est = np.zeros((grid.N, grid.N))
    if encrypted and keys is None:
        keys = make_keys(key_bits, seed)
    for i in range(grid.N):
        prob = Problem(grid.phis[i], grid.currents[i], lam, rho)
        k = min(K, prob.A.shape[1])
        if encrypted:
            cfg = session_config(prob, k, iters, delta, keys.public.key_bits, margin)
            x = run_session(prob, cfg, keys, seed=seed + i, backend=backend).history[-1]
        else:
            x, _ = plaintext_trajectory(prob, k, iters)
            x = x[-1]
        est[i, grid.others[i]] = x
    return est


def run_power_grid(exp: Experiment) -> Tables:
    rows = []
    keys = make_keys(exp.key_bits, exp.seed) if exp.encrypt_grid else None
    for ratio in exp.data_ratios:
        samples = max(1, int(round(ratio * exp.buses)))
        grid = gen_power_grid(exp.buses, exp.avg_degree, samples, exp.seed, noise_std=exp.noise_std)
        plain = edge_scores(reconstruct(grid, exp.K, exp.iters), grid)
        row = {"data_ratio": ratio, "samples": samples, "buses": exp.buses,
               "lines": int(plain[1].sum()), "auroc_plain": auroc(*plain),
               "auprc_plain": auprc(*plain), "auroc_encrypted": "", "auprc_encrypted": ""}
        if keys is not None:
            enc = edge_scores(reconstruct(grid, exp.K, exp.iters, encrypted=True, delta=exp.delta,
                                          margin=exp.margin, seed=exp.seed, keys=keys,
                                          backend=exp.backend), grid)
            row.update(auroc_encrypted=auroc(*enc), auprc_encrypted=auprc(*enc),
                       max_score_gap=float(np.max(np.abs(enc[0] - plain[0]))))
        rows.append(row)
    return {"power_grid": rows}


RUNNERS = {"quant_loss": run_quant_loss, "mse_compare": run_mse_compare,
           "sparsity_sweep": run_sparsity_sweep, "throughput": run_throughput,
           "latency": run_latency, "power_grid": run_power_grid}


def write_tables(out: str, tables: Tables, exp: Experiment, elapsed: float) -> Path:
    """One CSV per table plus manifest.json; returns the manifest path."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, rows in tables.items():
        path = root / f"{name}.csv"
        header: List[str] = []
        for row in rows:
            header += [k for k in row if k not in header]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header, restval="")
            writer.writeheader()
            writer.writerows(rows)
        files[name] = path.name
    manifest = {"version": __version__, "experiment": exp.to_dict(), "tables": files,
                "elapsed_seconds": elapsed}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def run_experiment(exp: Experiment) -> Tables:
    start = time.perf_counter()
    tables = RUNNERS[exp.kind](exp)
    if exp.out:
        write_tables(exp.out, tables, exp, time.perf_counter() - start)
    return tables
