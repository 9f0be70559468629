"""Federated optimization: sample clients, protect gradients, aggregate, step.

Each round samples a client subset, computes per-client gradients against an
immutable parameter snapshot, clips and perturbs them (local differential
privacy), aggregates with behavior-count weights and applies one SGD step.
Per-client RNG streams are derived from (seed, round, client index) so the
loop is reproducible regardless of execution order.
"""

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .params import ParamSet, collect_gradients


@dataclass
class FedConfig:
    sample_ratio: float = 0.02
    clip_scale: float = 0.1
    noise: float = 0.01
    learning_rate: float = 0.05
    max_rounds: int = 300
    window: int = 20
    tolerance: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.sample_ratio <= 1:
            raise ValueError("sample_ratio must be in (0, 1]")
        if self.clip_scale <= 0:
            raise ValueError("clip_scale must be > 0")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class GradientUpdate:
    client_id: int
    grads: np.ndarray
    weight: int

    def __post_init__(self):
        self.grads = np.asarray(self.grads, dtype=np.float64)
        if not np.all(np.isfinite(self.grads)):
            raise ValueError("gradient update contains non-finite entries")
        if self.weight < 1:
            raise ValueError("client weight must be >= 1")


@dataclass
class TrainResult:
    params: ParamSet
    history: list  # one dict per round
    converged_round: int = None  # first round satisfying the plateau criterion

    def losses(self):
        return [h["loss"] for h in self.history]


def sample_clients(client_ids, ratio, rng):
    """Uniform sample without replacement of size max(1, round(ratio * N))."""
    if len(client_ids) == 0:
        raise ValueError("empty client list")
    n = max(1, int(round(ratio * len(client_ids))))
    pick = rng.choice(len(client_ids), size=n, replace=False)
    return [client_ids[i] for i in sorted(pick)]


def protect_gradients(grads, clip_scale, noise, rng):
    """Per-component clamp to [-clip_scale, clip_scale] plus Laplace noise."""
    clipped = np.clip(np.asarray(grads, dtype=np.float64), -clip_scale, clip_scale)
    if noise == 0:
        return clipped
    return clipped + rng.laplace(0.0, noise, size=clipped.shape)


def aggregate(updates):
    """Behavior-weighted gradient average, reduced in ascending client id order."""
    if not updates:
        raise ValueError("no updates to aggregate")
    size = updates[0].grads.size
    for u in updates:
        if u.grads.size != size:
            raise ValueError("gradient manifests do not align")
    ordered = sorted(updates, key=lambda u: u.client_id)
    total_weight = float(sum(u.weight for u in ordered))
    out = np.zeros(size)
    for u in ordered:
        out = out + (u.weight / total_weight) * u.grads
    return out


def _exact_ratio(num, den):
    # rational arithmetic on the decimal reprs, so e.g. 2*0.2/1.2 reports as
    # exactly 1/3 instead of one ulp above it
    return float(2 * Fraction(str(num)) / Fraction(str(den)))


def privacy_budget(clip_scale, noise, delta, lambda_i):
    """LDP budget upper bounds: 2*clip/noise for gradients, 2*delta/lambda for
    interest scores. Infinite when the noise term is zero."""
    eps_g = float("inf") if noise == 0 else _exact_ratio(clip_scale, noise)
    eps_i = float("inf") if lambda_i == 0 else _exact_ratio(delta, lambda_i)
    return {"epsilon_gradient": eps_g, "epsilon_interest": eps_i}


def client_rng(seed, round_idx, client_idx):
    """Independent, reproducible RNG stream for one client in one round."""
    return np.random.default_rng([seed, round_idx, client_idx])


def rounds_to_target(losses, target, window=20):
    """Rounds needed until the trailing `window`-round mean loss drops below
    `target`; None if it never does. A noise-robust time-to-convergence
    measure for comparing client sampling ratios."""
    losses = np.asarray(losses, dtype=np.float64)
    if len(losses) < window:
        return None
    means = np.convolve(losses, np.ones(window) / window, mode="valid")
    hits = np.nonzero(means < target)[0]
    if len(hits) == 0:
        return None
    return int(hits[0]) + window


def _converged(losses, window, tolerance):
    if len(losses) < 2 * window:
        return False
    prev = float(np.mean(losses[-2 * window : -window]))
    cur = float(np.mean(losses[-window:]))
    return (prev - cur) < tolerance * max(abs(prev), 1e-12)


def train(model, clients, cfg: FedConfig, log_path=None, progress=None):
    """Run federated rounds until convergence or cfg.max_rounds.

    `model` must expose `params` (a ParamSet) and
    `client_loss(client, param_nodes, rng) -> (scalar Node, weight)`.
    `clients` is an ordered list; indices double as client ids for sampling
    and RNG stream derivation. Returns a TrainResult; params are updated on a
    copy, the model's own ParamSet is left untouched.
    """
    params = model.params.copy()
    sampler = np.random.default_rng([cfg.seed, 0xFED])
    history = []
    converged_round = None
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for rnd in range(cfg.max_rounds):
            t0 = time.perf_counter()
            indices = sample_clients(list(range(len(clients))), cfg.sample_ratio, sampler)
            updates = []
            losses = []
            weights = []
            raw_norm = 0.0
            for idx in indices:
                rng = client_rng(cfg.seed, rnd, idx)
                nodes = params.as_nodes()
                loss, weight = model.client_loss(clients[idx], nodes, rng)
                loss_val = float(loss.value)
                if not np.isfinite(loss_val):
                    raise RuntimeError(
                        f"divergence: non-finite loss at round {rnd}, client {idx}"
                    )
                loss.backward()
                grads = collect_gradients(nodes, params)
                raw_norm = max(raw_norm, float(np.linalg.norm(grads)))
                protected = protect_gradients(grads, cfg.clip_scale, cfg.noise, rng)
                updates.append(GradientUpdate(client_id=idx, grads=protected, weight=weight))
                losses.append(loss_val)
                weights.append(weight)
            merged = aggregate(updates)
            params = params.unflatten(params.flatten() - cfg.learning_rate * merged)
            mean_loss = float(np.average(losses, weights=weights))
            record = {
                "round": rnd,
                "n_clients": len(indices),
                "loss": mean_loss,
                "grad_norm_pre": raw_norm,
                "grad_norm_post": float(np.linalg.norm(merged)),
                "wall_time": time.perf_counter() - t0,
            }
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if progress:
                progress(record)
            if converged_round is None and _converged(
                [h["loss"] for h in history], cfg.window, cfg.tolerance
            ):
                converged_round = rnd
                break
    finally:
        if log_file:
            log_file.close()
    return TrainResult(params=params, history=history, converged_round=converged_round)
