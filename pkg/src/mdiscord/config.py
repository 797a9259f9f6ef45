"""Run configuration: YAML with explicit unit suffixes.

Keys ending in ``_hz`` are ordinary frequencies (converted to angular rates
internally), ``_ns`` are nanoseconds and ``_rad`` are radians.  Unknown keys
are reported as violations so typos cannot pass silently.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .discord_analysis import XI_SPAN, XI_STEP, BootstrapConfig
from .grid import DEFAULT_MIN_SHOTS
from .measurement_model import ModelParams
from .pulse_synthesis import DEFAULT_DT, DEFAULT_N, TWO_PI, CavityParams, EnvelopeSpec, JpcChannel

DEFAULT_SHOTS = 4_500_000


def _to_ns(seconds: float) -> float:
    # rounding keeps YAML -> config -> YAML free of 1e-16 noise
    return round(seconds * 1e9, 6)


@dataclass(frozen=True)
class GridSpec:
    n_bins: int = 51
    span_sigma: float = 5.0


@dataclass(frozen=True)
class PulseGrid:
    dt: float = DEFAULT_DT
    n_samples: int = DEFAULT_N


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = ModelParams()
    alice: CavityParams = CavityParams(kappa=TWO_PI * 5.1e6, chi=TWO_PI * 3.8e6, eta=0.53)
    bob: CavityParams = CavityParams(kappa=TWO_PI * 3.8e6, chi=TWO_PI * 1.8e6, eta=0.42)
    jpc_alice: JpcChannel = JpcChannel()
    jpc_bob: JpcChannel = JpcChannel()
    envelope: EnvelopeSpec = EnvelopeSpec()
    pulse_grid: PulseGrid = PulseGrid()
    lambdas: tuple[float, ...] = (0.0, 0.3, 0.6, 1.0, 1.3, 6.0)
    shots_total: int = DEFAULT_SHOTS
    grid: GridSpec = GridSpec()
    c_tomo_readout: float = 0.90
    min_shots: int = DEFAULT_MIN_SHOTS
    bootstrap: BootstrapConfig = BootstrapConfig()
    xi_span: float = XI_SPAN
    xi_step: float = XI_STEP
    bin_average: bool = True
    seed: int = 0
    chunk_shots: int = 200_000
    extra_violations: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def with_overrides(self, seed: int | None = None, lambdas: list[float] | None = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if lambdas is not None:
            out = replace(out, lambdas=tuple(float(v) for v in lambdas))
        return out

    def to_dict(self) -> dict:
        """Plain-data view in the same units and layout as the YAML file."""
        m = self.model
        return {
            "seed": self.seed,
            "lambdas": list(self.lambdas),
            "shots_total": self.shots_total,
            "chunk_shots": self.chunk_shots,
            "grid": {"n_bins": self.grid.n_bins, "span_sigma": self.grid.span_sigma},
            "min_shots": self.min_shots,
            "model": {
                "c_t2_alice": m.c_t2_alice,
                "c_t2_bob": m.c_t2_bob,
                "c_tomo": m.c_tomo,
                "eta_a": m.eta_a,
                "eta_b": m.eta_b,
                "xi_a_rad": m.xi_a,
                "xi_b_rad": m.xi_b,
                "q_bar": m.q_bar,
                "sigma_m": m.sigma_m,
            },
            "tomography": {"c_tomo_readout": self.c_tomo_readout},
            "cavities": {
                side: {"kappa_hz": c.kappa / TWO_PI, "chi_hz": c.chi / TWO_PI}
                for side, c in (("alice", self.alice), ("bob", self.bob))
            },
            "jpc": {
                side: {"kappa_hz": j.kappa_jpc / TWO_PI, "gain": j.gain, "delta_hz": j.delta / TWO_PI}
                for side, j in (("alice", self.jpc_alice), ("bob", self.jpc_bob))
            },
            "envelope": {
                "amplitude": self.envelope.amplitude,
                "t_slew_ns": _to_ns(self.envelope.t_slew),
                "t_duration_ns": _to_ns(self.envelope.t_duration),
            },
            "pulse_grid": {"dt_ns": _to_ns(self.pulse_grid.dt), "n_samples": self.pulse_grid.n_samples},
            "bootstrap": asdict(self.bootstrap),
            "xi_search": {"span_rad": self.xi_span, "step_rad": self.xi_step},
            "report_bin_average": self.bin_average,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SCHEMA = {
    "seed": None,
    "lambdas": None,
    "shots_total": None,
    "chunk_shots": None,
    "min_shots": None,
    "report_bin_average": None,
    "grid": {"n_bins", "span_sigma"},
    "model": {"c_t2_alice", "c_t2_bob", "c_tomo", "eta_a", "eta_b", "xi_a_rad", "xi_b_rad", "q_bar", "sigma_m"},
    "tomography": {"c_tomo_readout"},
    "cavities": {"alice", "bob"},
    "jpc": {"alice", "bob"},
    "envelope": {"amplitude", "t_slew_ns", "t_duration_ns"},
    "pulse_grid": {"dt_ns", "n_samples"},
    "bootstrap": {"n_resamples", "percentile", "seed", "min_records"},
    "xi_search": {"span_rad", "step_rad"},
}
_CAVITY_KEYS = {"kappa_hz", "chi_hz"}
_JPC_KEYS = {"kappa_hz", "gain", "delta_hz"}


def _unknown_keys(raw: dict) -> list[tuple[str, str]]:
    out = []
    for key, value in raw.items():
        if key not in _SCHEMA:
            out.append((key, "unknown key"))
            continue
        allowed = _SCHEMA[key]
        if allowed is None or not isinstance(value, dict):
            continue
        for sub, subval in value.items():
            if sub not in allowed:
                out.append((f"{key}.{sub}", "unknown key"))
            elif key in ("cavities", "jpc") and isinstance(subval, dict):
                keys = _CAVITY_KEYS if key == "cavities" else _JPC_KEYS
                out.extend((f"{key}.{sub}.{k}", "unknown key") for k in subval if k not in keys)
    return out


def config_from_dict(raw: dict) -> RunConfig:
    raw = raw or {}
    base = RunConfig()
    m = raw.get("model", {})
    dm = base.model
    model = ModelParams(
        c_t2_alice=float(m.get("c_t2_alice", dm.c_t2_alice)),
        c_t2_bob=float(m.get("c_t2_bob", dm.c_t2_bob)),
        c_tomo=float(m.get("c_tomo", dm.c_tomo)),
        eta_a=float(m.get("eta_a", dm.eta_a)),
        eta_b=float(m.get("eta_b", dm.eta_b)),
        xi_a=float(m.get("xi_a_rad", dm.xi_a)),
        xi_b=float(m.get("xi_b_rad", dm.xi_b)),
        q_bar=float(m.get("q_bar", dm.q_bar)),
        sigma_m=float(m.get("sigma_m", dm.sigma_m)),
    )

    def cavity(side: str, default: CavityParams, eta: float) -> CavityParams:
        c = raw.get("cavities", {}).get(side, {})
        return CavityParams(
            kappa=TWO_PI * float(c.get("kappa_hz", default.kappa / TWO_PI)),
            chi=TWO_PI * float(c.get("chi_hz", default.chi / TWO_PI)),
            eta=eta,
        )

    def jpc(side: str, default: JpcChannel) -> JpcChannel:
        j = raw.get("jpc", {}).get(side, {})
        return JpcChannel(
            gain=float(j.get("gain", default.gain)),
            kappa_jpc=TWO_PI * float(j.get("kappa_hz", default.kappa_jpc / TWO_PI)),
            delta=TWO_PI * float(j.get("delta_hz", default.delta / TWO_PI)),
        )

    env = raw.get("envelope", {})
    g = raw.get("grid", {})
    pg = raw.get("pulse_grid", {})
    b = raw.get("bootstrap", {})
    xs = raw.get("xi_search", {})
    return RunConfig(
        model=model,
        alice=cavity("alice", base.alice, model.eta_a),
        bob=cavity("bob", base.bob, model.eta_b),
        jpc_alice=jpc("alice", base.jpc_alice),
        jpc_bob=jpc("bob", base.jpc_bob),
        envelope=EnvelopeSpec(
            amplitude=float(env.get("amplitude", base.envelope.amplitude)),
            t_slew=float(env.get("t_slew_ns", _to_ns(base.envelope.t_slew))) / 1e9,
            t_duration=float(env.get("t_duration_ns", _to_ns(base.envelope.t_duration))) / 1e9,
        ),
        pulse_grid=PulseGrid(
            dt=float(pg.get("dt_ns", _to_ns(base.pulse_grid.dt))) / 1e9,
            n_samples=int(pg.get("n_samples", base.pulse_grid.n_samples)),
        ),
        lambdas=tuple(float(v) for v in raw.get("lambdas", base.lambdas)),
        shots_total=int(raw.get("shots_total", base.shots_total)),
        chunk_shots=int(raw.get("chunk_shots", base.chunk_shots)),
        grid=GridSpec(
            n_bins=int(g.get("n_bins", base.grid.n_bins)),
            span_sigma=float(g.get("span_sigma", base.grid.span_sigma)),
        ),
        c_tomo_readout=float(raw.get("tomography", {}).get("c_tomo_readout", base.c_tomo_readout)),
        min_shots=int(raw.get("min_shots", base.min_shots)),
        bootstrap=BootstrapConfig(
            n_resamples=int(b.get("n_resamples", base.bootstrap.n_resamples)),
            percentile=float(b.get("percentile", base.bootstrap.percentile)),
            seed=int(b.get("seed", base.bootstrap.seed)),
            min_records=int(b.get("min_records", base.bootstrap.min_records)),
        ),
        xi_span=float(xs.get("span_rad", base.xi_span)),
        xi_step=float(xs.get("step_rad", base.xi_step)),
        bin_average=bool(raw.get("report_bin_average", base.bin_average)),
        seed=int(raw.get("seed", base.seed)),
        extra_violations=tuple(_unknown_keys(raw)),
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return config_from_dict(raw or {})


def validate_config(cfg: RunConfig) -> list[tuple[str, str]]:
    """All violated invariants as (path, message); empty when the config is usable."""
    out = list(cfg.extra_violations)
    out += cfg.model.violations("model")
    # cavity efficiencies mirror model.eta_a / model.eta_b, already checked above
    for side, cav in (("alice", cfg.alice), ("bob", cfg.bob)):
        out += [(p, m) for p, m in cav.violations(f"cavities.{side}") if not p.endswith(".eta")]
    out += cfg.jpc_alice.violations("jpc.alice")
    out += cfg.jpc_bob.violations("jpc.bob")
    out += cfg.envelope.violations("envelope")
    out += cfg.bootstrap.violations("bootstrap")
    lams = list(cfg.lambdas)
    if not lams:
        out.append(("lambdas", "at least one strength is required"))
    if any(v < 0 for v in lams):
        out.append(("lambdas", "strengths must be >= 0"))
    if lams != sorted(lams):
        out.append(("lambdas", f"not sorted; use {sorted(lams)}"))
    if len(set(lams)) != len(lams):
        out.append(("lambdas", "duplicate strengths"))
    if cfg.shots_total < 1:
        out.append(("shots_total", "must be >= 1"))
    if cfg.chunk_shots < 1:
        out.append(("chunk_shots", "must be >= 1"))
    if cfg.grid.n_bins < 1:
        out.append(("grid.n_bins", "must be >= 1"))
    if not cfg.grid.span_sigma > 0:
        out.append(("grid.span_sigma", "must be > 0"))
    if not 0 < cfg.c_tomo_readout <= 1:
        out.append(("tomography.c_tomo_readout", "must lie in (0, 1]"))
    if cfg.min_shots < 1:
        out.append(("min_shots", "must be >= 1"))
    if not cfg.xi_span > 0 or not cfg.xi_step > 0:
        out.append(("xi_search", "span_rad and step_rad must be > 0"))
    if not cfg.pulse_grid.dt > 0:
        out.append(("pulse_grid.dt_ns", "must be > 0"))
    if cfg.pulse_grid.n_samples < 16:
        out.append(("pulse_grid.n_samples", "must be >= 16"))
    return out
