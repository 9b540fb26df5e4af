"""Scenario files: TOML schema, overrides and validation."""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..adaptation import AdaptationParams
from ..consolidation import ConsolidationError, consolidate
from ..constraints import ConstraintSpec, CorridorGeometry, FfCbfParams, build_constraint_set
from ..control import ControlBounds
from ..dynamics import VehicleParams, make_state

ROLES = ("controlled", "non_responsive_moving", "non_responsive_static")
CONTROLLERS = ("ccbf_decentralized", "ccbf_centralized", "baseline_qp")

DEFAULTS: dict[str, Any] = {
    "sim": {"dt": 0.01, "t_end": 30.0, "rng_seed": 0, "goal_tol": 0.25, "name": ""},
    "cbf": {"s_max": 1.0, "T": 3.0, "eps_ff": 0.5, "R": 0.25, "collisions": True},
    "corridor": None,
    "adaptation": {
        "k0": 1.0, "k_min": 0.01, "eps": 0.01, "alpha_k": 1.0, "alpha_p": 1.0,
        "mu0": 0.0, "P_scale": 1.0, "class_k": "linear",
    },
    "control": {
        "controller": "ccbf_decentralized", "a_max": 2.0, "omega_max": 2.0, "r": 1.0,
        "gamma_H": 1.0, "baseline_alpha": 1.0, "beta_max": 1.0,
    },
    "sampling": {
        "x": [-5.0, 5.0], "y": [-5.0, 5.0], "psi": [-3.141592653589793, 3.141592653589793],
        "beta": [-1.0, 1.0], "v": [0.0, 1.0],
    },
}
CORRIDOR_KEYS = {"m_L", "b_L", "m_R", "b_R", "interior"}
AGENT_DEFAULTS: dict[str, Any] = {
    "name": "", "role": "controlled", "state": None, "goal": None, "l_r": 0.5, "l_f": 0.5,
    "v_max": None, "a_max": None, "omega_max": None, "stop_at": None, "hold": 2.0,
    "start_time": 0.0, "stop_tol": 0.1,
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    name: str
    role: str
    state: np.ndarray
    goal: tuple[float, float] | None
    vehicle: VehicleParams
    bounds: ControlBounds
    v_max: float
    stop_at: tuple[float, float] | None = None
    hold: float = 2.0
    start_time: float = 0.0
    stop_tol: float = 0.1

    @property
    def controlled(self) -> bool:
        return self.role == "controlled"


@dataclass
class ScenarioConfig:
    dt: float
    t_end: float
    agents: list[AgentConfig]
    constraint_spec: ConstraintSpec
    controller: str
    r: float
    gamma_H: float
    baseline_alpha: float
    beta_max: float
    k0: float
    k_min: float
    eps: float
    alpha_k: float
    alpha_p: float
    mu0: float
    P_scale: float
    class_k: str
    goal_tol: float
    rng_seed: int
    sampling: dict[str, list[float]]
    raw: dict = field(default_factory=dict, repr=False)
    name: str = ""

    @property
    def controlled(self) -> list[int]:
        return [i for i, a in enumerate(self.agents) if a.controlled]

    @property
    def vehicles(self) -> list[VehicleParams]:
        return [a.vehicle for a in self.agents]

    @property
    def bounds(self) -> list[ControlBounds]:
        return [a.bounds for a in self.agents]

    def initial_states(self) -> list[np.ndarray]:
        return [a.state.copy() for a in self.agents]

    def adaptation_params(self, c: int) -> AdaptationParams:
        return AdaptationParams(
            c=c, P=self.P_scale * np.eye(c), k_min=self.k_min, alpha_k_gain=self.alpha_k,
            alpha_p_gain=self.alpha_p, mu0=self.mu0, eps=self.eps, alpha_kind=self.class_k,
        )

    def with_controller(self, controller: str) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        raw.setdefault("control", {})["controller"] = controller
        return from_dict(raw)


# -- overrides --------------------------------------------------------------------


def parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; list entries are addressed by index (``agents.0.goal``)."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ScenarioError(f"override {key!r}: no list entry {part!r}")
                idx = int(part)
                if last:
                    node[idx] = parse_value(value.strip())
                else:
                    node = node[idx]
                continue
            allowed = _allowed_keys(parts[:depth])
            if part not in node and (allowed is None or part not in allowed):
                raise ScenarioError(f"override {key!r}: unknown key {part!r}")
            if last:
                node[part] = parse_value(value.strip())
            else:
                node = node.setdefault(part, {})
    return raw


def _allowed_keys(prefix):
    if not prefix:
        return set(DEFAULTS) | {"agents"}
    if len(prefix) == 1 and prefix[0] == "corridor":
        return CORRIDOR_KEYS
    if len(prefix) == 1 and isinstance(DEFAULTS.get(prefix[0]), dict):
        return set(DEFAULTS[prefix[0]])
    if len(prefix) == 2 and prefix[0] == "agents":
        return set(AGENT_DEFAULTS)
    return None


# -- loading ----------------------------------------------------------------------


def _line_of(text: str | None, pattern: str, occurrence: int = 0) -> str:
    if not text:
        return ""
    hits = [i + 1 for i, line in enumerate(text.splitlines()) if re.match(pattern, line.strip())]
    return f" (line {hits[occurrence]})" if occurrence < len(hits) else ""


def load_scenario(path, overrides=None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    try:
        return from_dict(raw, text=text)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _section(raw, name):
    data = raw.get(name) or {}
    if not isinstance(data, dict):
        raise ScenarioError(f"[{name}] must be a table")
    unknown = set(data) - set(DEFAULTS[name])
    if unknown:
        raise ScenarioError(f"[{name}] unknown keys: {sorted(unknown)}")
    out = dict(DEFAULTS[name])
    out.update(data)
    return out


def _pair(value, what):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{what} must be two finite numbers, got {value!r}")
    return (float(arr[0]), float(arr[1]))


def from_dict(raw: dict, text: str | None = None) -> ScenarioConfig:
    unknown = set(raw) - set(DEFAULTS) - {"agents"}
    if unknown:
        raise ScenarioError(f"unknown top-level tables: {sorted(unknown)}")
    sim = _section(raw, "sim")
    cbf = _section(raw, "cbf")
    ad = _section(raw, "adaptation")
    ctl = _section(raw, "control")
    samp = _section(raw, "sampling")

    dt, t_end = float(sim["dt"]), float(sim["t_end"])
    if not dt > 0:
        raise ScenarioError(f"sim.dt must be positive, got {dt}" + _line_of(text, r"dt\s*="))
    if not t_end > dt:
        raise ScenarioError(f"sim.t_end must exceed dt, got {t_end}" + _line_of(text, r"t_end\s*="))
    if ctl["controller"] not in CONTROLLERS:
        raise ScenarioError(f"control.controller must be one of {CONTROLLERS}, got {ctl['controller']!r}")

    corridor = None
    if raw.get("corridor") is not None:
        cor = raw["corridor"]
        unknown = set(cor) - CORRIDOR_KEYS
        missing = CORRIDOR_KEYS - set(cor)
        if unknown or missing:
            raise ScenarioError(f"[corridor] unknown keys {sorted(unknown)}, missing keys {sorted(missing)}")
        try:
            corridor = CorridorGeometry.oriented(
                float(cor["m_L"]), float(cor["b_L"]), float(cor["m_R"]), float(cor["b_R"]),
                _pair(cor["interior"], "corridor.interior"),
            )
        except ValueError as exc:
            raise ScenarioError("[corridor]" + _line_of(text, r"\[corridor\]") + f": {exc}") from exc

    try:
        ff = FfCbfParams(T=float(cbf["T"]), eps_ff=float(cbf["eps_ff"]), R=float(cbf["R"]))
    except ValueError as exc:
        raise ScenarioError(f"[cbf]: {exc}") from exc
    if not float(cbf["s_max"]) > 0:
        raise ScenarioError("cbf.s_max must be positive")
    spec = ConstraintSpec(s_max=float(cbf["s_max"]), corridor=corridor, ff=ff, collisions=bool(cbf["collisions"]))

    agents_raw = raw.get("agents") or []
    if not agents_raw:
        raise ScenarioError("scenario defines no [[agents]]")
    agents = []
    for idx, a in enumerate(agents_raw):
        where = f"agents[{idx}]" + (f" ({a.get('name')})" if a.get("name") else "") + _line_of(text, r"\[\[agents\]\]", idx)
        unknown = set(a) - set(AGENT_DEFAULTS)
        if unknown:
            raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
        spec_a = dict(AGENT_DEFAULTS)
        spec_a.update(a)
        if spec_a["role"] not in ROLES:
            raise ScenarioError(f"{where}: role must be one of {ROLES}, got {spec_a['role']!r}")
        st = spec_a["state"]
        if st is None or len(st) != 5:
            raise ScenarioError(f"{where}: state must be [x, y, psi, beta, v]")
        try:
            state = make_state(*map(float, st))
            vehicle = VehicleParams(l_r=float(spec_a["l_r"]), l_f=float(spec_a["l_f"]), radius=ff.R)
            if spec_a["role"] == "non_responsive_static":
                # a parked agent applies no input, so it adds nothing to the robustness margin
                bounds = ControlBounds(0.0, 0.0)
            else:
                bounds = ControlBounds(
                    float(spec_a["a_max"] if spec_a["a_max"] is not None else ctl["a_max"]),
                    float(spec_a["omega_max"] if spec_a["omega_max"] is not None else ctl["omega_max"]),
                )
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
        if abs(st[3]) >= np.pi / 2:
            raise ScenarioError(f"{where}: slip angle must satisfy |beta| < pi/2")
        goal = _pair(spec_a["goal"], f"{where}.goal")
        if spec_a["role"] != "non_responsive_static" and goal is None:
            raise ScenarioError(f"{where}: moving agents need a goal")
        v_max = float(spec_a["v_max"]) if spec_a["v_max"] is not None else float(cbf["s_max"])
        agents.append(AgentConfig(
            name=spec_a["name"] or f"agent{idx}", role=spec_a["role"], state=state, goal=goal,
            vehicle=vehicle, bounds=bounds, v_max=v_max, stop_at=_pair(spec_a["stop_at"], f"{where}.stop_at"),
            hold=float(spec_a["hold"]), start_time=float(spec_a["start_time"]), stop_tol=float(spec_a["stop_tol"]),
        ))

    cfg = ScenarioConfig(
        dt=dt, t_end=t_end, agents=agents, constraint_spec=spec, controller=ctl["controller"],
        r=float(ctl["r"]), gamma_H=float(ctl["gamma_H"]), baseline_alpha=float(ctl["baseline_alpha"]),
        beta_max=float(ctl["beta_max"]), k0=float(ad["k0"]), k_min=float(ad["k_min"]), eps=float(ad["eps"]),
        alpha_k=float(ad["alpha_k"]), alpha_p=float(ad["alpha_p"]), mu0=float(ad["mu0"]),
        P_scale=float(ad["P_scale"]), class_k=str(ad["class_k"]), goal_tol=float(sim["goal_tol"]),
        rng_seed=int(sim["rng_seed"]), sampling={k: list(map(float, v)) for k, v in samp.items()},
        raw=copy.deepcopy(raw), name=str(sim["name"]),
    )
    validate(cfg, text)
    return cfg


def validate(cfg: ScenarioConfig, text: str | None = None) -> None:
    """Initial-condition checks: every constituent positive, ``H > 0`` and ``h_p >= 0``."""
    if not cfg.controlled:
        raise ScenarioError("scenario has no controlled agents")
    if not (cfg.r > 0 and cfg.gamma_H > 0 and cfg.eps > 0 and cfg.k0 > 0):
        raise ScenarioError("control.r, control.gamma_H, adaptation.eps and adaptation.k0 must be positive")
    if cfg.k0 < cfg.k_min:
        raise ScenarioError("adaptation.k0 must be at least adaptation.k_min")
    cfg.adaptation_params(2)  # checks the remaining adaptation settings
    states = cfg.initial_states()
    n = len(states)
    groups = []
    if cfg.controller == "ccbf_centralized":
        from .engine import joint_constraint_set

        groups.append(("controlled agents", joint_constraint_set(cfg.controlled, states, cfg)))
    else:
        for i in cfg.controlled:
            groups.append((i, build_constraint_set(i, states, cfg.vehicles, cfg.constraint_spec)))
    for who, evals in groups:
        label = who if isinstance(who, str) else f"agents[{who}] ({cfg.agents[who].name})"
        line = "" if isinstance(who, str) else _line_of(text, r"\[\[agents\]\]", who)
        for ev in evals:
            if not ev.h > 0:
                raise ScenarioError(
                    f"{label}{line}: initial state violates constraint '{ev.name}' (h = {ev.h:.6g})"
                )
        if len(evals) < 2:
            raise ScenarioError(f"{label}: needs at least two constituent constraints, got {len(evals)}")
        try:
            ctx = consolidate(evals, np.full(len(evals), cfg.k0), eps=cfg.eps, n_agents=n)
        except ConsolidationError as exc:
            raise ScenarioError(f"{label}: {exc}") from exc
        if not ctx.H > 0:
            raise ScenarioError(f"{label}{line}: consolidated barrier H = {ctx.H:.6g} is not positive at t = 0")
        if cfg.controller != "baseline_qp" and not ctx.h_p >= 0:
            raise ScenarioError(
                f"{label}{line}: h_p = {ctx.h_p:.6g} < 0 at t = 0; initial gains leave L_G H near zero"
            )
