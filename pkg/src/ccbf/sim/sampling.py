"""Monte Carlo check that the consolidated safe set lies inside every constituent safe set."""
from __future__ import annotations

import numpy as np

from ..consolidation import consolidated_value
from ..constraints import build_constraint_set
from ..dynamics import make_state
from .scenario import ScenarioConfig

BOX_KEYS = ("x", "y", "psi", "beta", "v")


def sample_safety(cfg: ScenarioConfig, n_samples: int, seed: int | None = None, k=None) -> dict:
    """Sample ego states uniformly over ``cfg.sampling`` and count subset violations.

    The ego cycles through the controlled agents; every other agent stays
    at its initial state. A violation is a sample with ``H >= 0`` while some
    ``h_s <= 0``. ``k`` is a scalar, a length-``c`` gain vector, or a 2-D
    array holding one gain vector per row (default: all ones); every gain
    vector is checked against the same samples and ``violations`` is the
    total over all of them.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    lo = np.array([cfg.sampling[key][0] for key in BOX_KEYS])
    hi = np.array([cfg.sampling[key][1] for key in BOX_KEYS])
    if np.any(hi < lo):
        raise ValueError("sampling box has an upper bound below its lower bound")
    gains = np.asarray(1.0 if k is None else k, dtype=float)
    gains = gains.reshape(1, -1) if gains.ndim < 2 else gains
    if np.any(gains <= 0):
        raise ValueError("gains must be positive")

    base = cfg.initial_states()
    controlled = cfg.controlled
    draws = rng.uniform(lo, hi, size=(n_samples, 5))
    per_gain = [{"n_H_nonnegative": 0, "violations": 0} for _ in gains]
    examples = []
    for idx, sample in enumerate(draws):
        ego = controlled[idx % len(controlled)]
        states = list(base)
        states[ego] = make_state(*sample)
        evals = build_constraint_set(ego, states, cfg.vehicles, cfg.constraint_spec)
        h = np.array([ev.h for ev in evals])
        for row, rec in zip(gains, per_gain):
            H = consolidated_value(h, np.broadcast_to(row, h.shape))
            if H >= 0:
                rec["n_H_nonnegative"] += 1
                if np.any(h <= 0):
                    rec["violations"] += 1
                    if len(examples) < 10:
                        examples.append({"sample": idx, "agent": ego, "state": sample.tolist(), "H": H,
                                         "gains": row.tolist(), "constraint": evals[int(np.argmin(h))].name})
    return {
        "n_samples": n_samples,
        "seed": seed,
        "n_gain_vectors": len(gains),
        "n_H_nonnegative": sum(r["n_H_nonnegative"] for r in per_gain),
        "violations": sum(r["violations"] for r in per_gain),
        "per_gain": per_gain,
        "violation_examples": examples,
    }
