"""Experiment configuration: YAML in, validated dataclasses out, and back.

A config file looks like::

    schema_version: 1
    model:
      N: 36
      M: 2
      d: 2
      kernel: {f_amplitude: 4, f_decay: 8, g_scale: 2, a_const: 1}   # g_core defaults to 1/(3 sqrt N)
      cost: {alpha1: 1, alpha2: 1.0e-4, alpha3: 1.0e-4, x_f: [0.5, 0.5]}
    grid: {dt: 0.01, horizon: 4}
    initial:
      layout: lattice            # or "uniform" (needs seed)
      lattice: [6, 6]
      extent: [-0.2, 0.2]
      drivers: [[-1, 0], [0, -1]]
    control: {kind: constant, values: [[0.2, 0.02], [0.02, 0.2]]}
    rbm: {P: 2, seed: 0}
    gd: {alpha0: 0.1, decrease_ratio: 1.0e-6, alpha_min: 1.0e-15, max_iters: 20000, cost_tol: 1.0e-6}
    mpc: {tau: 1.5, t_hat: 3.0, predictor: rbm, P: 2, seed: 0, reseed: fresh}
    sde: {sigma: 0.5, seed: 0}
    study: {P_list: [2, 4], replicas: 200, repetitions: 100, metric: rms, workers: 1}
    output: {dir: out, save_stride: 1}

Every section except ``model`` and ``grid`` is optional.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..dynamics import (CostParams, Grid, ModelParams, State, constant_control,
                        lattice_positions)
from ..errors import ConfigError, InvalidParameterError
from ..kernels import KernelParams
from ..mpc import MpcConfig
from ..optimizer import GdConfig
from ..stochastic import SdeParams

SCHEMA_VERSION = 1


@dataclass
class InitialSpec:
    layout: str = "lattice"
    lattice: Optional[tuple] = None
    extent: tuple = (-0.2, 0.2)
    seed: Optional[int] = None
    drivers: tuple = ((-1.0, 0.0), (0.0, -1.0))


@dataclass
class ControlSpec:
    kind: str = "constant"
    values: Optional[tuple] = None
    path: Optional[str] = None


@dataclass
class RbmSpec:
    P: int = 2
    seed: int = 0


@dataclass
class StudySpec:
    P_list: tuple = (2, 4)
    replicas: int = 200
    repetitions: int = 100
    metric: str = "rms"
    workers: int = 1


@dataclass
class ExperimentConfig:
    model: ModelParams
    grid: Grid
    initial: InitialSpec = field(default_factory=InitialSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    rbm: Optional[RbmSpec] = None
    gd: GdConfig = field(default_factory=GdConfig)
    mpc: Optional[MpcConfig] = None
    sde: Optional[SdeParams] = None
    study: StudySpec = field(default_factory=StudySpec)
    output_dir: str = "out"
    save_stride: int = 1

    def initial_state(self) -> State:
        mp, ini = self.model, self.initial
        if ini.layout == "lattice":
            x = lattice_positions(ini.lattice, ini.extent)
        else:
            rng = np.random.Generator(np.random.PCG64(ini.seed))
            x = rng.uniform(ini.extent[0], ini.extent[1], size=(mp.N, mp.d))
        return State(x, np.zeros_like(x), np.asarray(ini.drivers, dtype=float))

    def control_schedule(self, n_steps: Optional[int] = None) -> np.ndarray:
        """Control over ``n_steps`` (default: the grid); file controls are cut or zero-padded."""
        n = self.grid.n_steps if n_steps is None else n_steps
        if self.control.kind == "constant":
            return constant_control(self.control.values, n)
        from .io import read_control_csv

        u = read_control_csv(self.control.path, self.model.M, self.model.d)
        out = np.zeros((n, self.model.M, self.model.d))
        k = min(n, u.shape[0])
        out[:k] = u[:k]
        return out


def _section(raw, key, required=False):
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing required section '{key}'", fields=(key,))
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"section '{key}' must be a mapping", fields=(key,))
    return val


def _build(ctor, kwargs, where):
    try:
        return ctor(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}", fields=(where,)) from exc
    except InvalidParameterError as exc:
        raise ConfigError(f"{where}: {exc}", fields=(where,)) from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}", fields=("schema_version",))

    m = _section(raw, "model", required=True)
    for key in ("N", "M"):
        if key not in m:
            raise ConfigError(f"model.{key} is required", fields=(f"model.{key}",))
    N, M, d = int(m["N"]), int(m["M"]), int(m.get("d", 2))
    kern = dict(m.get("kernel") or {})
    if kern.get("g_core") is None:
        kern["g_core"] = 1.0 / (3.0 * math.sqrt(N))
    kernel = _build(KernelParams, kern, "model.kernel")
    cost_raw = dict(m.get("cost") or {})
    cost_raw.setdefault("x_f", [0.5] * d)
    cost = _build(CostParams, cost_raw, "model.cost")
    model = _build(ModelParams, dict(N=N, M=M, d=d, kernel=kernel, cost=cost), "model")

    g = _section(raw, "grid", required=True)
    grid = _build(Grid, dict(dt=float(g.get("dt", 0.01)), horizon=float(g.get("horizon", 0))),
                  "grid")
    if grid.n_steps < 1:
        raise ConfigError("grid.horizon must cover at least one step", fields=("grid.horizon",))

    ini_raw = _section(raw, "initial")
    initial = InitialSpec(
        layout=ini_raw.get("layout", "lattice"),
        lattice=tuple(ini_raw["lattice"]) if ini_raw.get("lattice") is not None else None,
        extent=tuple(float(e) for e in ini_raw.get("extent", (-0.2, 0.2))),
        seed=ini_raw.get("seed"),
        drivers=tuple(tuple(float(c) for c in p)
                      for p in ini_raw.get("drivers", ((-1.0, 0.0), (0.0, -1.0)))),
    )
    if initial.layout == "lattice":
        if initial.lattice is None:
            side = round(N ** (1.0 / d))
            if side ** d != N:
                raise ConfigError(
                    f"model.N={N} is not a perfect power; set initial.lattice explicitly",
                    fields=("model.N", "initial.lattice"))
            initial.lattice = (side,) * d
        if len(initial.lattice) != d or int(np.prod(initial.lattice)) != N:
            raise ConfigError(
                f"initial.lattice={list(initial.lattice)} holds {int(np.prod(initial.lattice))} "
                f"evaders but model.N={N} (d={d})", fields=("model.N", "initial.lattice"))
    elif initial.layout == "uniform":
        if initial.seed is None:
            raise ConfigError("initial.seed is required for a uniform layout",
                              fields=("initial.seed",))
    else:
        raise ConfigError(f"unknown initial.layout {initial.layout!r}", fields=("initial.layout",))
    if len(initial.drivers) != M or any(len(p) != d for p in initial.drivers):
        raise ConfigError(f"initial.drivers must list model.M={M} points of dimension {d}",
                          fields=("model.M", "initial.drivers"))

    c_raw = _section(raw, "control")
    control = ControlSpec(kind=c_raw.get("kind", "constant"), path=c_raw.get("path"))
    if control.kind == "constant":
        vals = c_raw.get("values", [[0.0] * d] * M)
        control.values = tuple(tuple(float(c) for c in row) for row in vals)
        if len(control.values) != M or any(len(r) != d for r in control.values):
            raise ConfigError(f"control.values must be {M} rows of {d} numbers",
                              fields=("control.values", "model.M"))
    elif control.kind == "file":
        if not control.path:
            raise ConfigError("control.path is required for kind 'file'", fields=("control.path",))
    else:
        raise ConfigError(f"unknown control.kind {control.kind!r}", fields=("control.kind",))

    rbm = None
    if raw.get("rbm") is not None:
        r = _section(raw, "rbm")
        rbm = RbmSpec(P=int(r.get("P", 2)), seed=int(r.get("seed", 0)))
        if not 2 <= rbm.P <= N:
            raise ConfigError(f"rbm.P={rbm.P} must lie in [2, model.N={N}]",
                              fields=("rbm.P", "model.N"))

    gd = _build(GdConfig, {k: (int(v) if k == "max_iters" else float(v))
                           for k, v in _section(raw, "gd").items()}, "gd")

    mpc = None
    if raw.get("mpc") is not None:
        mr = _section(raw, "mpc")
        predictor = mr.get("predictor", "rbm")
        if predictor not in ("rbm", "full"):
            raise ConfigError(f"mpc.predictor must be 'rbm' or 'full', got {predictor!r}",
                              fields=("mpc.predictor",))
        P = int(mr.get("P", rbm.P if rbm else 2)) if predictor == "rbm" else None
        mpc = _build(MpcConfig, dict(tau=float(mr.get("tau", 1.5)),
                                     t_hat=float(mr.get("t_hat", 3.0)), batch_size=P,
                                     seed=int(mr.get("seed", 0)),
                                     reseed=mr.get("reseed", "fresh"), gd=gd), "mpc")
        for name in ("tau", "t_hat"):
            val = getattr(mpc, name)
            k = round(val / grid.dt)
            if abs(k * grid.dt - val) > 1e-9 * max(1.0, val):
                raise ConfigError(f"mpc.{name}={val} is not a multiple of grid.dt={grid.dt}",
                                  fields=(f"mpc.{name}", "grid.dt"))

    sde = None
    if raw.get("sde") is not None:
        s = _section(raw, "sde")
        sde = _build(SdeParams, dict(sigma=float(s.get("sigma", 0.5)),
                                     seed=int(s.get("seed", 0))), "sde")

    st = _section(raw, "study")
    study = StudySpec(P_list=tuple(int(p) for p in st.get("P_list", (2, 4))),
                      replicas=int(st.get("replicas", 200)),
                      repetitions=int(st.get("repetitions", 100)),
                      metric=st.get("metric", "rms"), workers=int(st.get("workers", 1)))
    if study.metric not in ("rms", "mean"):
        raise ConfigError("study.metric must be 'rms' or 'mean'", fields=("study.metric",))

    out = _section(raw, "output")
    cfg = ExperimentConfig(model=model, grid=grid, initial=initial, control=control, rbm=rbm,
                           gd=gd, mpc=mpc, sde=sde, study=study,
                           output_dir=str(out.get("dir", "out")),
                           save_stride=int(out.get("save_stride", 1)))
    if cfg.save_stride < 1:
        raise ConfigError("output.save_stride must be >= 1", fields=("output.save_stride",))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved plain-data form; ``config_from_dict`` inverts it."""
    mp = cfg.model
    k = mp.kernel
    raw = {
        "schema_version": SCHEMA_VERSION,
        "model": {
            "N": mp.N, "M": mp.M, "d": mp.d,
            "kernel": {"f_amplitude": k.f_amplitude, "f_decay": k.f_decay,
                       "g_scale": k.g_scale, "g_core": k.g_core, "a_const": k.a_const},
            "cost": {"alpha1": mp.cost.alpha1, "alpha2": mp.cost.alpha2,
                     "alpha3": mp.cost.alpha3, "x_f": list(mp.cost.x_f)},
        },
        "grid": {"dt": cfg.grid.dt, "horizon": cfg.grid.horizon},
        "initial": {"layout": cfg.initial.layout,
                    "lattice": list(cfg.initial.lattice) if cfg.initial.lattice else None,
                    "extent": list(cfg.initial.extent), "seed": cfg.initial.seed,
                    "drivers": [list(p) for p in cfg.initial.drivers]},
        "control": ({"kind": "constant", "values": [list(r) for r in cfg.control.values]}
                    if cfg.control.kind == "constant"
                    else {"kind": "file", "path": cfg.control.path}),
        "gd": {"alpha0": cfg.gd.alpha0, "decrease_ratio": cfg.gd.decrease_ratio,
               "alpha_min": cfg.gd.alpha_min, "max_iters": cfg.gd.max_iters,
               "cost_tol": cfg.gd.cost_tol},
        "study": {"P_list": list(cfg.study.P_list), "replicas": cfg.study.replicas,
                  "repetitions": cfg.study.repetitions, "metric": cfg.study.metric,
                  "workers": cfg.study.workers},
        "output": {"dir": cfg.output_dir, "save_stride": cfg.save_stride},
    }
    if cfg.rbm is not None:
        raw["rbm"] = {"P": cfg.rbm.P, "seed": cfg.rbm.seed}
    if cfg.mpc is not None:
        m = cfg.mpc
        raw["mpc"] = {"tau": m.tau, "t_hat": m.t_hat,
                      "predictor": "full" if m.batch_size is None else "rbm",
                      "P": m.batch_size, "seed": m.seed, "reseed": m.reseed}
    if cfg.sde is not None:
        raw["sde"] = {"sigma": cfg.sde.sigma, "seed": cfg.sde.seed}
    return raw


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def apply_overrides(cfg: ExperimentConfig, seed=None, replicas=None, p_list=None, mode=None,
                    out=None) -> ExperimentConfig:
    """Fold CLI flags into a config. ``--seed`` reseeds batches, noise and MPC windows."""
    cfg = replace(cfg)
    if seed is not None:
        if cfg.rbm is not None:
            cfg.rbm = replace(cfg.rbm, seed=seed)
        if cfg.sde is not None:
            cfg.sde = replace(cfg.sde, seed=seed)
        if cfg.mpc is not None:
            cfg.mpc = replace(cfg.mpc, seed=seed)
    if replicas is not None:
        cfg.study = replace(cfg.study, replicas=replicas)
    if p_list is not None:
        cfg.study = replace(cfg.study, P_list=tuple(p_list))
        if cfg.rbm is not None:
            cfg.rbm = replace(cfg.rbm, P=p_list[0])
    if mode == "full":
        cfg.rbm = None
    elif mode == "rbm" and cfg.rbm is None:
        cfg.rbm = RbmSpec(P=p_list[0] if p_list else 2, seed=seed or 0)
    if cfg.rbm is not None and not 2 <= cfg.rbm.P <= cfg.model.N:
        raise ConfigError(f"rbm.P={cfg.rbm.P} must lie in [2, model.N={cfg.model.N}]",
                          fields=("rbm.P", "model.N"))
    if out is not None:
        cfg.output_dir = str(out)
    return cfg
