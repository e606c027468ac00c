"""INI experiment configuration.

Every field lives in one section and has a default, except ``model.seed``.
``to_ini`` writes every field, and floats are written with their shortest
round-trip repr, so ``parse_config(cfg.to_ini()) == cfg``.
"""
import configparser
from dataclasses import dataclass, fields, replace
from typing import Optional

from .model import ModelParams

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "SCHEMA_VERSION", "KINDS"]

SCHEMA_VERSION = 1
KINDS = ("simulate", "hitting", "ness", "mixing", "drift", "oracle")


class ConfigError(ValueError):
    pass


def _f(section, default, kind, doc):
    return {"section": section, "default": default, "kind": kind, "doc": doc}


# name -> (section, default, type, doc); order is the file order
SCHEMA = {
    "schema_version": _f("experiment", SCHEMA_VERSION, "int", "config schema version"),
    "kind": _f("experiment", "simulate", "str", "one of " + ", ".join(KINDS)),
    "workers": _f("experiment", None, "optint", "worker threads (empty: NESS_KMC_WORKERS or CPU count)"),
    "N": _f("model", 3, "int", "number of sites"),
    "T_L": _f("model", 1.0, "float", "left bath temperature"),
    "T_R": _f("model", 2.0, "float", "right bath temperature"),
    "K": _f("model", 10.0, "float", "rate cap"),
    "eta": _f("model", 0.05, "float", "Lyapunov exponent parameter"),
    "h": _f("model", None, "optfloat", "sampling step (empty: 1/((N+1)K))"),
    "M0": _f("model", None, "optfloat", "bad-set threshold on V (empty: calibrate)"),
    "M1": _f("model", None, "optfloat", "reference-set threshold on W (empty: calibrate)"),
    "seed": _f("model", None, "int", "64-bit seed (required)"),
    "e_min": _f("model", 1e-12, "float", "deep-bad-set diagnostic floor"),
    "calib_q": _f("calibration", 0.99, "float", "quantile used for M0 and M1"),
    "calib_t_pilot": _f("calibration", 2000.0, "float", "pilot run length"),
    "calib_burn_in": _f("calibration", 100.0, "float", "pilot burn-in"),
    "sim_t_end": _f("simulate", 10.0, "float", "trajectory length"),
    "sim_count": _f("simulate", 1, "int", "number of trajectories"),
    "sim_initial": _f("simulate", "flat:0.5,2.5", "str", "initial-law spec"),
    "sim_chain": _f("simulate", True, "bool", "also write the time-h chain"),
    "hit_initial": _f("hitting", "boundary:2,0.01", "str", "initial-law spec"),
    "hit_count": _f("hitting", 100000, "int", "number of trajectories"),
    "hit_t_max": _f("hitting", 10000000, "int", "censoring index"),
    "hit_target": _f("hitting", "C", "str", "C or G"),
    "hit_induced": _f("hitting", False, "bool", "count induced-chain steps (geometric fit)"),
    "hit_window": _f("hitting", "drop:0.1", "str", "fit window: default, lo:hi or drop:f"),
    "hit_n_boot": _f("hitting", 1000, "int", "bootstrap replicates"),
    "ness_initial": _f("ness", "flat:0.5,2.5", "str", "initial-law spec"),
    "ness_count": _f("ness", 100, "int", "number of trajectories"),
    "ness_t_end": _f("ness", 1000.0, "float", "trajectory length"),
    "ness_burn_in": _f("ness", 100.0, "float", "discarded initial time"),
    "mix_law_mu": _f("mixing", "boundary:2,0.01", "str", "first initial law"),
    "mix_law_nu": _f("mixing", "flat:0.5,2.5", "str", "second initial law"),
    "mix_times": _f("mixing", [8.0, 16.0, 32.0, 64.0, 128.0], "floatlist", "observation times"),
    "mix_count": _f("mixing", 100000, "int", "trajectories per ensemble"),
    "mix_bins": _f("mixing", 8, "int", "equiprobable bins per coordinate"),
    "mix_mode": _f("mixing", "joint", "str", "joint or marginal"),
    "mix_n_boot": _f("mixing", 200, "int", "bootstrap replicates"),
    "mix_floor_factor": _f("mixing", 3.0, "float", "fit only where TV exceeds this times the floor"),
    "drift_estimator": _f("drift", "time_h", "str", "time_h, induced_W or jump"),
    "drift_probe": _f("drift", "boundary:2,0.0001", "str", "initial-law spec the probed states are drawn from"),
    "drift_probes": _f("drift", 10, "int", "number of probed states"),
    "drift_samples": _f("drift", 10000, "int", "Monte-Carlo samples per state"),
    "oracle_bins": _f("oracle", 512, "int", "grid cells per coordinate"),
    "oracle_spacing": _f("oracle", "quadratic", "str", "quadratic, exp or uniform"),
    "oracle_e_max": _f("oracle", None, "optfloat", "grid top (empty: 20*max(T_L, T_R))"),
    "oracle_events": _f("oracle", 10000000, "int", "simulator events for the comparison histogram"),
    "oracle_burn_events": _f("oracle", 10000, "int", "discarded simulator events"),
    "oracle_generator": _f("oracle", "", "str", "optional CSV generator matrix to solve instead"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    kind: str = "simulate"
    workers: Optional[int] = None
    N: int = 3
    T_L: float = 1.0
    T_R: float = 2.0
    K: float = 10.0
    eta: float = 0.05
    h: Optional[float] = None
    M0: Optional[float] = None
    M1: Optional[float] = None
    seed: Optional[int] = None
    e_min: float = 1e-12
    calib_q: float = 0.99
    calib_t_pilot: float = 2000.0
    calib_burn_in: float = 100.0
    sim_t_end: float = 10.0
    sim_count: int = 1
    sim_initial: str = "flat:0.5,2.5"
    sim_chain: bool = True
    hit_initial: str = "boundary:2,0.01"
    hit_count: int = 100000
    hit_t_max: int = 10000000
    hit_target: str = "C"
    hit_induced: bool = False
    hit_window: str = "drop:0.1"
    hit_n_boot: int = 1000
    ness_initial: str = "flat:0.5,2.5"
    ness_count: int = 100
    ness_t_end: float = 1000.0
    ness_burn_in: float = 100.0
    mix_law_mu: str = "boundary:2,0.01"
    mix_law_nu: str = "flat:0.5,2.5"
    mix_times: tuple = (8.0, 16.0, 32.0, 64.0, 128.0)
    mix_count: int = 100000
    mix_bins: int = 8
    mix_mode: str = "joint"
    mix_n_boot: int = 200
    mix_floor_factor: float = 3.0
    drift_estimator: str = "time_h"
    drift_probe: str = "boundary:2,0.0001"
    drift_probes: int = 10
    drift_samples: int = 10000
    oracle_bins: int = 512
    oracle_spacing: str = "quadratic"
    oracle_e_max: Optional[float] = None
    oracle_events: int = 10000000
    oracle_burn_events: int = 10000
    oracle_generator: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mix_times", tuple(float(t) for t in self.mix_times))
        if self.seed is None:
            raise ConfigError("model.seed is required")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.hit_target not in ("C", "G"):
            raise ConfigError("hitting.target must be C or G")
        if self.mix_mode not in ("joint", "marginal"):
            raise ConfigError("mixing.mode must be joint or marginal")
        if self.drift_estimator not in ("time_h", "induced_W", "jump"):
            raise ConfigError("drift.estimator must be time_h, induced_W or jump")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def params(self):
        return ModelParams(N=self.N, T_L=self.T_L, T_R=self.T_R, K=self.K, eta=self.eta, h=self.h,
                           M0=self.M0, M1=self.M1, seed=self.seed, e_min=self.e_min)

    def replace(self, **kw):
        return replace(self, **kw)

    def as_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    def to_ini(self):
        lines = []
        current = None
        for name, meta in SCHEMA.items():
            sec = meta["section"]
            if sec != current:
                lines.append(("\n" if current else "") + f"[{sec}]")
                current = sec
            key = name.split("_", 1)[1] if sec in _PREFIX.values() and name.startswith(_rev(sec)) else name
            lines.append(f"# {meta['doc']}")
            lines.append(f"{key} = {_dump(getattr(self, name), meta['kind'])}")
        return "\n".join(lines) + "\n"


_PREFIX = {"sim": "simulate", "hit": "hitting", "ness": "ness", "mix": "mixing", "drift": "drift",
           "oracle": "oracle", "calib": "calibration"}


def _rev(sec):
    return next(k for k, v in _PREFIX.items() if v == sec) + "_"


def _dump(v, kind):
    if v is None:
        return ""
    if kind == "bool":
        return "true" if v else "false"
    if kind in ("float", "optfloat"):
        return repr(float(v))
    if kind == "floatlist":
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _load(text, kind, where):
    text = text.strip()
    try:
        if kind in ("optint", "optfloat") and text == "":
            return None
        if kind in ("int", "optint"):
            return int(text, 0) if text.lower().startswith("0x") else int(text)
        if kind in ("float", "optfloat"):
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "floatlist":
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {kind}") from None


def parse_config(text, overrides=None):
    """Parse INI text; ``overrides`` (field -> value) win over the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#", ";"),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lookup = {}
    for name, meta in SCHEMA.items():
        sec = meta["section"]
        key = name[len(_rev(sec)):] if sec in _PREFIX.values() and name.startswith(_rev(sec)) else name
        lookup[(sec, key)] = name
    values = {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            name = lookup.get((sec, key))
            if name is None:
                raise ConfigError(f"unknown key {sec}.{key}")
            values[name] = _load(raw, SCHEMA[name]["kind"], f"{sec}.{key}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), overrides)
