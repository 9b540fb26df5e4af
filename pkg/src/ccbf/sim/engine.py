"""Fixed-step multi-agent simulation.

Every step reads one snapshot of all agent states and, for each controlled
agent, runs: constraints -> consolidation -> gain adaptation -> safety
filter. All inputs are then applied together and states and gains are
integrated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..adaptation import AdaptationInfeasible, adapt_gains, integrate_gains
from ..consolidation import ConsolidationError, consolidate
from ..constraints import build_constraint_set, ff_collision_cbf
from ..control import (
    NominalLaw,
    baseline_decentralized,
    centralized_ccbf,
    decentralized_ccbf,
    nominal_input,
)
from ..dynamics import INPUT_DIM, step
from ..linalg_qp import QpStatus
from .scenario import AgentConfig, ScenarioConfig

log = logging.getLogger(__name__)

SAFETY_TOL = 1e-6


def joint_constraint_set(agents, states, cfg: ScenarioConfig):
    """Constraints of the communicating set, each controlled pair counted once."""
    group = set(agents)
    out = []
    for i in agents:
        for ev in build_constraint_set(i, states, cfg.vehicles, cfg.constraint_spec):
            j = ev.agents[-1]
            if ev.name.startswith("collision") and j in group and j < i:
                continue
            out.append(ev)
    return out


@dataclass
class _Script:
    """Stop-and-go state of a non-responsive agent."""

    phase: str = "go"
    hold_until: float = 0.0


def _script_target(agent: AgentConfig, script: _Script, z, t):
    if agent.stop_at is None:
        return agent.goal
    if script.phase == "go":
        if np.hypot(*(z[:2] - agent.stop_at)) < agent.stop_tol and abs(z[4]) < 0.05:
            script.phase = "hold"
            script.hold_until = t + agent.hold
        else:
            return agent.stop_at
    if script.phase == "hold":
        if t < script.hold_until:
            return agent.stop_at
        script.phase = "done"
    return agent.goal


@dataclass
class StepLog:
    t: float
    states: list[list[float]]
    inputs: list[list[float]]
    u_nom: list[list[float]]
    agents: dict[int, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "states": self.states,
            "inputs": self.inputs,
            "u_nom": self.u_nom,
            "controlled": {str(i): rec for i, rec in self.agents.items()},
        }


@dataclass
class RunResult:
    config: ScenarioConfig
    logs: list[StepLog]
    final_states: list[np.ndarray]
    completed: bool
    failure: dict | None
    summary: dict


def _laws(cfg: ScenarioConfig):
    return [
        NominalLaw(goal=a.goal, v_max=a.v_max, bounds=a.bounds, beta_max=cfg.beta_max) if a.goal else None
        for a in cfg.agents
    ]


def run(cfg: ScenarioConfig) -> RunResult:
    states = cfg.initial_states()
    n = len(states)
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    laws = _laws(cfg)
    gains = {id(law): law.gains for law in laws if law is not None}
    scripts = [_Script() for _ in cfg.agents]
    controlled = cfg.controlled
    centralized = cfg.controller == "ccbf_centralized"

    groups = [tuple(controlled)] if centralized else [(i,) for i in controlled]
    k = {}
    prev_Q = {}
    for g in groups:
        evals = joint_constraint_set(g, states, cfg) if centralized else build_constraint_set(
            g[0], states, cfg.vehicles, cfg.constraint_spec)
        k[g] = np.full(len(evals), cfg.k0)
        prev_Q[g] = None
    adapt_params = {g: cfg.adaptation_params(k[g].size) for g in groups}

    u_prev = np.zeros(n * INPUT_DIM)
    logs: list[StepLog] = []
    failure = None

    for step_idx in range(n_steps + 1):
        t = step_idx * dt
        u_nom = []
        for i, (agent, law) in enumerate(zip(cfg.agents, laws)):
            z = states[i]
            if agent.role == "non_responsive_static" or law is None:
                u_nom.append(np.zeros(INPUT_DIM))
            elif agent.role == "non_responsive_moving" and t < agent.start_time:
                u_nom.append(agent.bounds.clip(np.array([-z[4], -z[3]]) * 2.0))
            elif agent.role == "non_responsive_moving":
                target = _script_target(agent, scripts[i], z, t)
                tl = NominalLaw(goal=target, v_max=law.v_max, bounds=law.bounds, beta_max=law.beta_max)
                u_nom.append(nominal_input(z, tl, gains[id(law)]))
            else:
                u_nom.append(nominal_input(z, law, gains[id(law)]))
        u = [v.copy() for v in u_nom]
        records: dict[int, dict] = {}

        for g in groups:
            if failure is not None:
                break
            try:
                _control_group(g, cfg, states, k, prev_Q, adapt_params, u_nom, u, u_prev, records, n)
            except _StepFailure as exc:
                failure = {"t": t, "step": step_idx, "agents": list(g), "reason": str(exc)}
                log.warning("run terminated at t=%.3f: %s", t, exc)

        logs.append(StepLog(
            t=t,
            states=[z.tolist() for z in states],
            inputs=[v.tolist() for v in u],
            u_nom=[v.tolist() for v in u_nom],
            agents=records,
        ))
        if failure is not None or step_idx == n_steps:
            break

        for g in groups:
            rec = records[g[0]]
            k[g] = integrate_gains(k[g], np.asarray(rec["_k_dot"]), dt, cfg.k_min)
        for rec in records.values():
            rec.pop("_k_dot", None)
        states = [step(z, ui, dt, veh) for z, ui, veh in zip(states, u, cfg.vehicles)]
        u_prev = np.concatenate(u)

    for rec in (logs[-1].agents.values() if logs else ()):
        rec.pop("_k_dot", None)
    summary = summarize(logs, cfg, failure)
    return RunResult(cfg, logs, states, failure is None, failure, summary)


class _StepFailure(RuntimeError):
    pass


def _control_group(g, cfg, states, k, prev_Q, adapt_params, u_nom, u, u_prev, records, n):
    if cfg.controller == "ccbf_centralized":
        evals = joint_constraint_set(g, states, cfg)
    else:
        evals = build_constraint_set(g[0], states, cfg.vehicles, cfg.constraint_spec)
    kg = k[g]
    try:
        ctx = consolidate(evals, kg, prev_Q[g], cfg.dt, cfg.eps, n_agents=n)
    except ConsolidationError as exc:
        raise _StepFailure(f"agent(s) {list(g)}: {exc}") from exc
    prev_Q[g] = ctx.Q

    rec = {
        "names": [ev.name for ev in evals],
        "h": ctx.h.tolist(),
        "H": ctx.H,
        "k": kg.tolist(),
        "h_p": ctx.h_p,
        "lgh_norm": float(np.linalg.norm(ctx.LGH)),
        "null_dim": int(ctx.N.shape[1]),
    }

    if cfg.controller == "baseline_qp":
        i = g[0]
        k_dot = np.zeros(kg.size)
        res = baseline_decentralized(i, evals, u_nom[i], cfg.agents[i].bounds, cfg.baseline_alpha)
        rec.update(k_dot=k_dot.tolist(), d=0.0, qp_status=res.status.value, qp_iterations=res.iterations,
                   adapt_iterations=0)
    else:
        try:
            ad = adapt_gains(ctx, u_prev, adapt_params[g])
        except AdaptationInfeasible as exc:
            rec.update(k_dot=None, d=None, qp_status="adaptation_infeasible", qp_iterations=0, adapt_iterations=0)
            _record(records, g, rec, np.zeros(kg.size))
            raise _StepFailure(f"agent(s) {list(g)}: {exc}") from exc
        k_dot = ad.k_dot
        if cfg.controller == "ccbf_centralized":
            u_nom_stacked = np.concatenate([u_nom[i] for i in g])
            res = centralized_ccbf(g, ctx, k_dot, u_nom_stacked, cfg.bounds, cfg.r, cfg.gamma_H)
        else:
            res = decentralized_ccbf(g[0], ctx, k_dot, u_nom[g[0]], cfg.bounds, cfg.r, cfg.gamma_H)
        rec.update(k_dot=k_dot.tolist(), d=res.d, qp_status=res.status.value, qp_iterations=res.iterations,
                   adapt_iterations=ad.iterations, LFH=ctx.lfh_with_gain_rate(k_dot))
    _record(records, g, rec, k_dot)
    if res.status is not QpStatus.OPTIMAL:
        raise _StepFailure(f"agent(s) {list(g)}: control QP {res.status.value} (H={ctx.H:.4g}, d={res.d:.4g})")
    for pos, i in enumerate(g):
        u[i] = res.u[pos * INPUT_DIM:(pos + 1) * INPUT_DIM].copy()


def _record(records, g, rec, k_dot):
    rec["_k_dot"] = np.asarray(k_dot).tolist()
    for i in g:
        records[i] = rec


# -- metrics ----------------------------------------------------------------------


def pairwise_min_distance(logs, cfg: ScenarioConfig):
    """Smallest center distance over time among pairs that include a controlled agent."""
    controlled = set(cfg.controlled)
    best = (np.inf, None, None)
    for rec in logs:
        pos = np.array([s[:2] for s in rec.states])
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                if i in controlled or j in controlled:
                    dist = float(np.hypot(*(pos[i] - pos[j])))
                    if dist < best[0]:
                        best = (dist, rec.t, (i, j))
    return best


def summarize(logs, cfg: ScenarioConfig, failure: dict | None = None) -> dict:
    if not logs:
        raise ValueError("no steps logged")
    tol = SAFETY_TOL
    per_agent = {}
    violations = []
    for i in cfg.controlled:
        names = None
        mins = None
        H_min = hp_min = lgh_min = np.inf
        k_min_seen = np.inf
        failures = 0
        for rec in logs:
            a = rec.agents.get(i)
            if a is None:
                continue
            h = np.asarray(a["h"])
            if names is None:
                names, mins = a["names"], h.copy()
            mins = np.minimum(mins, h)
            H_min = min(H_min, a["H"])
            hp_min = min(hp_min, a["h_p"])
            lgh_min = min(lgh_min, a["lgh_norm"])
            k_min_seen = min(k_min_seen, min(a["k"]))
            if a["qp_status"] != QpStatus.OPTIMAL.value:
                failures += 1
            for name, val in zip(a["names"], h):
                if val < -tol:
                    violations.append({"agent": i, "t": rec.t, "constraint": name, "h": float(val)})
        goal = cfg.agents[i].goal
        arrival = None
        final_dist = None
        if goal is not None:
            for rec in logs:
                if np.hypot(rec.states[i][0] - goal[0], rec.states[i][1] - goal[1]) <= cfg.goal_tol:
                    arrival = rec.t
                    break
            final_dist = float(np.hypot(logs[-1].states[i][0] - goal[0], logs[-1].states[i][1] - goal[1]))
        per_agent[str(i)] = {
            "name": cfg.agents[i].name,
            "min_h": dict(zip(names, map(float, mins))) if names else {},
            "min_H": float(H_min),
            "min_h_p": float(hp_min),
            "min_lgh_norm": float(lgh_min),
            "min_k": float(k_min_seen),
            "goal_arrival_time": arrival,
            "final_goal_distance": final_dist,
            "qp_failures": failures,
        }
    dmin, t_dmin, pair = pairwise_min_distance(logs, cfg)
    two_r = 2 * cfg.constraint_spec.ff.R
    distance_ok = bool(dmin >= two_r - tol)
    if not distance_ok:
        violations.append({"pair": list(pair), "t": t_dmin, "constraint": "distance", "distance": dmin})
    verdict = not violations
    return {
        "scenario": cfg.name,
        "controller": cfg.controller,
        "steps": len(logs),
        "t_final": logs[-1].t,
        "completed": failure is None,
        "failure": failure,
        "verdict": verdict,
        "min_pairwise_distance": dmin,
        "min_pairwise_distance_t": t_dmin,
        "min_pairwise_pair": list(pair) if pair else None,
        "two_R": two_r,
        "all_reached_goal": all(a["goal_arrival_time"] is not None for a in per_agent.values()),
        "agents": per_agent,
        "violations": violations[:50],
        "n_violations": len(violations),
    }


def forward_invariance_margins(logs, cfg: ScenarioConfig):
    """``H(t+dt) - (1 - dt gamma_H) H(t) + 10 dt^2`` for every logged step; nonnegative when the check holds."""
    out = {}
    dt = cfg.dt
    for i in cfg.controlled:
        H = np.array([rec.agents[i]["H"] for rec in logs if i in rec.agents])
        out[i] = H[1:] - (1 - dt * cfg.gamma_H) * H[:-1] + 10 * dt * dt
    return out


def collision_value(z_i, z_j, cfg: ScenarioConfig, i: int, j: int) -> float:
    return ff_collision_cbf(z_i, z_j, cfg.constraint_spec.ff, cfg.vehicles[i], cfg.vehicles[j], i, j).h
