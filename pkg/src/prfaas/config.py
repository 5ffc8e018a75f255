"""Versioned JSON run configuration.

Schema (version 1)::

    {
      "version": 1,
      "profiles": {"<alias>": "<builtin name | path.json>", ...},
      "workload": {"length_dist": {...}, "output_len": 1024,
                   "arrival": {"process": "poisson", "rate": null}, "seed": 0},
      "deployments": [
        {"name": "...", "active": true, "optimize": true, "threshold": 19400,
         "prfaas": {"profile": "<alias>", "gpus": 32, "egress_gbps": 100.0},
         "pd": {"profile": "<alias>", "prefill_instances": 3, "decode_instances": 5}}
      ],
      "baseline": "<deployment name>",
      "optimizer": {"t_points": 200, "refine": true},
      "scheduler": {"util_threshold": 0.85, "queue_factor": 2.0,
                    "scarce_utilization": 0.5, "update_cooldown_s": 30.0,
                    "realloc_period_s": 300.0},
      "simulator": {"duration": 7200.0, "load_factors": [0.9], "warmup_frac": 0.1,
                    "monitor_interval_s": 1.0, "util_window_s": 10.0,
                    "adaptive_threshold": false, "realloc": false},
      "output_dir": "out"
    }

Missing sections take the defaults above.  ``prfaas`` may be omitted for a
PD-only deployment, and ``threshold`` defaults to the distribution's upper
bound (nothing offloaded).  Relative profile paths and trace files resolve
against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .exceptions import ConfigError, PrfaasError
from .profiles import HardwareModelProfile, load_profile
from .simulator import SimOptions
from .throughput import DeploymentConfig, PDCluster, PrfaasCluster
from .workload import WorkloadSpec

SCHEMA_VERSION = 1


@dataclass
class PrfaasSpec:
    profile: str
    gpus: int | None = None
    instances: int | None = None
    egress_gbps: float = 100.0

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"profile": self.profile, "egress_gbps": self.egress_gbps}
        if self.gpus is not None:
            d["gpus"] = self.gpus
        if self.instances is not None:
            d["instances"] = self.instances
        return d


@dataclass
class PDSpec:
    profile: str
    prefill_instances: int
    decode_instances: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DeploymentSpec:
    name: str
    pd: PDSpec
    prfaas: PrfaasSpec | None = None
    threshold: float | None = None
    active: bool = False
    optimize: bool = True

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "active": self.active, "optimize": self.optimize}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        if self.prfaas is not None:
            d["prfaas"] = self.prfaas.to_dict()
        d["pd"] = self.pd.to_dict()
        return d


@dataclass
class OptimizerParams:
    t_points: int = 200
    refine: bool = True


@dataclass
class SchedulerParams:
    util_threshold: float = 0.85
    queue_factor: float = 2.0
    scarce_utilization: float = 0.5
    update_cooldown_s: float = 30.0
    realloc_period_s: float = 300.0


@dataclass
class SimulatorParams:
    duration: float = 7200.0
    load_factors: list[float] = field(default_factory=lambda: [0.9])
    warmup_frac: float = 0.1
    monitor_interval_s: float = 1.0
    util_window_s: float = 10.0
    adaptive_threshold: bool = False
    realloc: bool = False


def _params(cls, raw: dict | None, section: str):
    raw = raw or {}
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    return cls(**raw)


@dataclass
class RunConfig:
    profiles: dict[str, str]
    workload: WorkloadSpec
    deployments: list[DeploymentSpec]
    baseline: str | None = None
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    simulator: SimulatorParams = field(default_factory=SimulatorParams)
    output_dir: str = "out"
    base_dir: Path | None = field(default=None, compare=False, repr=False)
    version: int = SCHEMA_VERSION

    # -- parsing ---------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "RunConfig":
        try:
            version = int(d.get("version", SCHEMA_VERSION))
            if version != SCHEMA_VERSION:
                raise ConfigError(f"unsupported config version {version}")
            profiles = dict(d.get("profiles") or {})
            if not profiles:
                raise ConfigError("config lists no profiles")
            if "workload" not in d:
                raise ConfigError("config has no workload section")
            workload = WorkloadSpec.from_dict(d["workload"], base_dir)
            deps = []
            for raw in d.get("deployments") or []:
                pr = raw.get("prfaas")
                deps.append(
                    DeploymentSpec(
                        name=str(raw["name"]),
                        pd=PDSpec(**raw["pd"]),
                        prfaas=PrfaasSpec(**pr) if pr else None,
                        threshold=None if raw.get("threshold") is None else float(raw["threshold"]),
                        active=bool(raw.get("active", False)),
                        optimize=bool(raw.get("optimize", True)),
                    )
                )
            if not deps:
                raise ConfigError("config lists no deployments")
            names = [x.name for x in deps]
            if len(set(names)) != len(names):
                raise ConfigError("deployment names must be unique")
            for x in deps:
                refs = [x.pd.profile] + ([x.prfaas.profile] if x.prfaas else [])
                for ref in refs:
                    if ref not in profiles:
                        raise ConfigError(f"deployment {x.name!r} references unknown profile {ref!r}")
            baseline = d.get("baseline")
            if baseline is not None and baseline not in names:
                raise ConfigError(f"baseline {baseline!r} is not a deployment")
            return cls(
                profiles=profiles,
                workload=workload,
                deployments=deps,
                baseline=baseline,
                optimizer=_params(OptimizerParams, d.get("optimizer"), "optimizer"),
                scheduler=_params(SchedulerParams, d.get("scheduler"), "scheduler"),
                simulator=_params(SimulatorParams, d.get("simulator"), "simulator"),
                output_dir=str(d.get("output_dir", "out")),
                base_dir=base_dir,
                version=version,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, PrfaasError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "profiles": dict(self.profiles),
            "workload": self.workload.to_dict(),
            "deployments": [x.to_dict() for x in self.deployments],
            "baseline": self.baseline,
            "optimizer": asdict(self.optimizer),
            "scheduler": asdict(self.scheduler),
            "simulator": asdict(self.simulator),
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # -- resolution ------------------------------------------------------------
    def deployment(self, name: str | None = None) -> DeploymentSpec:
        if name is not None:
            for x in self.deployments:
                if x.name == name:
                    return x
            raise ConfigError(f"no deployment named {name!r}")
        active = [x for x in self.deployments if x.active]
        if len(active) != 1:
            raise ConfigError(f"exactly one deployment must be active, found {len(active)}")
        return active[0]

    def profile(self, alias: str) -> HardwareModelProfile:
        ref = self.profiles[alias]
        path = Path(ref)
        if ref.endswith(".json") and not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
            ref = str(path)
        try:
            return load_profile(ref)
        except (OSError, PrfaasError, ValueError) as exc:
            raise ConfigError(f"cannot load profile {alias!r} ({self.profiles[alias]}): {exc}") from exc

    def build(self, spec: DeploymentSpec) -> DeploymentConfig:
        dist = self.workload.length_dist
        prfaas = None
        if spec.prfaas is not None:
            p = spec.prfaas
            prfaas = PrfaasCluster(self.profile(p.profile), instances=p.instances, gpus=p.gpus, egress_gbps=p.egress_gbps)
        pd = PDCluster(self.profile(spec.pd.profile), spec.pd.prefill_instances, spec.pd.decode_instances)
        threshold = dist.upper if spec.threshold is None else spec.threshold
        return DeploymentConfig(pd, dist, threshold, prfaas, self.workload.output_len, spec.name)

    def sim_options(self) -> SimOptions:
        s, c = self.simulator, self.scheduler
        return SimOptions(
            warmup_frac=s.warmup_frac,
            monitor_interval_s=s.monitor_interval_s,
            util_window_s=s.util_window_s,
            adaptive_threshold=s.adaptive_threshold,
            util_threshold=c.util_threshold,
            queue_factor=c.queue_factor,
            update_cooldown_s=c.update_cooldown_s,
            realloc=s.realloc,
            realloc_period_s=c.realloc_period_s,
            scarce_utilization=c.scarce_utilization,
        )


def load_config(source: str | Path | None) -> RunConfig:
    """Read a config file, or a bundled one via ``builtin:<name>``."""
    if source is None:
        source = "builtin:case_study"
    text_src = str(source)
    if text_src.startswith("builtin:"):
        name = text_src.removeprefix("builtin:")
        try:
            text = resources.files("prfaas.data").joinpath(f"{name}.json").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no bundled config {name!r}") from None
        base_dir = None
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base_dir = path.parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw, base_dir)
