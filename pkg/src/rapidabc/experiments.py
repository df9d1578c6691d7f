"""Experiment configuration, presets and runners behind the command line.

A config is a flat INI document. Every random draw of a run flows from the
single ``seed`` through :class:`rapidabc.core.Streams`, so identical configs
give byte-identical outputs.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import (
    STREAM_DATA,
    BoxPrior,
    Streams,
    ThresholdSchedule,
    WeightedPopulation,
    read_population_csv,
)
from .models import lattice as lat
from .models import ou
from .moment import moment_error
from .samplers import (
    APPROX,
    EXACT,
    ConfigError,
    Discrepancy,
    Model,
    SamplerReport,
    mm_smc_abc,
    pc_smc_abc,
    rejection_report,
    smc_abc,
)
from .solvers import (
    allee_ode_model,
    allee_ode_solve,
    fisher_kpp_model,
    fisher_kpp_model_solve,
)

KINDS = ("ou-infer", "allee-infer", "scratch-infer", "toy-infer", "forwards-sim", "alpha-bench")
METHODS = ("smc", "pc-smc", "mm-smc", "rejection")
TARGETS = ("ou", "allee", "scratch", "toy")
BENCH_ALPHAS = (0.8, 0.4, 0.2, 0.1, 0.05, 0.025)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    kind: str = "allee-infer"
    target: str = ""
    method: str = "smc"
    approx_only: bool = False
    seed: int = 1
    M: int = 1000
    eps0: float = 4.0
    levels: int = 5
    epsilons: tuple[float, ...] = ()
    alpha: float = 0.1
    truth: tuple[float, ...] = ()
    max_attempts: int = 100_000
    # [lattice]
    I: int = 80
    J: int = 68
    Pm: float = 0.0
    p0: float = 0.25
    times: tuple[float, ...] = ()
    placement: str = lat.EMPTY_NEIGHBOR
    # [ou]
    ou_N: int = 1000
    ou_T: float = 1.0
    ou_dt: float = 0.01
    ou_x0: float = 10.0
    ou_gamma: float = 2.0
    ou_mu: float = 1.0
    ou_joint: bool = False
    ou_D_max: float = 50.0
    ou_exact_data: bool = True
    # [solver]
    ode_tol: float = 1e-6
    pde_tol: float = 1e-4
    # [bench]
    reps: int = 10
    P: int = 6
    alphas: tuple[float, ...] = BENCH_ALPHAS
    reference: str = ""
    # [forwards]
    realizations: int = 20

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.target and self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}")
        if self.M < 2:
            raise ConfigError("M must be at least 2")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.placement not in (lat.EMPTY_NEIGHBOR, lat.ABORT):
            raise ConfigError(f"unknown placement rule {self.placement!r}")

    @property
    def problem(self) -> str:
        """Model family: explicit target, else implied by the experiment kind."""
        if self.target:
            return self.target
        if self.kind.endswith("-infer"):
            return self.kind[: -len("-infer")]
        raise ConfigError(f"experiment {self.kind!r} needs a target")

    def schedule(self) -> ThresholdSchedule:
        if self.epsilons:
            return ThresholdSchedule(self.epsilons)
        return ThresholdSchedule.halving(self.eps0, self.levels)

    # INI round trip -----------------------------------------------------

    def to_ini(self) -> str:
        cp = _parser()
        for f in fields(self):
            section, key = _section_of(f.name)
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key, _fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        cp = _parser()
        cp.read_string(text)
        known = {_section_of(f.name): f for f in fields(cls)}
        values = {}
        for section in cp.sections():
            for key, raw in cp.items(section):
                f = known.get((section, key))
                if f is None:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[f.name] = _parse(f, raw)
        base = base if base is not None else cls()
        return replace(base, **values)

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def read(cls, path, base=None) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(), base)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as M and I are case-sensitive
    return cp


_GROUPS = {
    "lattice": ("I", "J", "Pm", "p0", "times", "placement"),
    "solver": ("ode_tol", "pde_tol"),
    "bench": ("reps", "P", "alphas", "reference"),
    "forwards": ("realizations",),
}


def _section_of(name: str) -> tuple[str, str]:
    if name.startswith("ou_"):
        return "ou", name[3:]
    for section, names in _GROUPS.items():
        if name in names:
            return section, name
    return "experiment", name


def _parse(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    typ = f.type if isinstance(f.type, str) else f.type.__name__
    if typ == "bool":
        if raw.lower() not in ("true", "false"):
            raise ConfigError(f"{f.name}: expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ.startswith("tuple"):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def preset(kind: str, scale: str = "desk", target: str = "") -> ExperimentConfig:
    """Default configuration for an experiment kind at desk or paper scale.

    ``forwards-sim`` and ``alpha-bench`` reuse the inference preset of their
    target (allee by default for the former, the toy model for the latter).
    """
    if scale not in ("desk", "paper"):
        raise ConfigError(f"unknown preset {scale!r}")
    if kind == "forwards-sim":
        base = preset(f"{target or 'allee'}-infer", scale)
        return replace(base, kind=kind, target=target or "allee")
    if kind == "alpha-bench":
        base = preset(f"{target or 'toy'}-infer", scale)
        return replace(base, kind=kind, target=target or "toy", method="mm-smc")
    desk = scale == "desk"
    if kind == "allee-infer":
        return ExperimentConfig(kind=kind, M=500 if desk else 1000, eps0=4.0, levels=5,
                                truth=(1e-3, 0.1, 5 / 6), I=20 if desk else 80,
                                J=17 if desk else 68, Pm=0.0,
                                times=tuple(1000.0 * k for k in range(1, 11)))
    if kind == "scratch-infer":
        return ExperimentConfig(kind=kind, M=500 if desk else 1000, eps0=64.0,
                                levels=4 if desk else 5, truth=(1e-3, 0.25, 5 / 6),
                                I=20 if desk else 80, J=17 if desk else 68,
                                times=tuple(300.0 * k for k in range(1, 11)))
    if kind == "ou-infer":
        return ExperimentConfig(kind=kind, M=1000, eps0=6.4, levels=4, truth=(10.0,))
    if kind == "toy-infer":
        return ExperimentConfig(kind=kind, M=1000, eps0=0.4, levels=3, truth=(0.5,))
    raise ConfigError(f"unknown experiment kind {kind!r}")


# Problems ---------------------------------------------------------------------

@dataclass
class Problem:
    names: tuple[str, ...]
    exact: Model
    approx: Model
    prior: BoxPrior
    rho: Discrepancy
    observed: np.ndarray
    truth: np.ndarray
    rho_approx: Discrepancy | None = None
    extra: dict = field(default_factory=dict)


def _ou_base(cfg: ExperimentConfig) -> ou.OuParams:
    return ou.OuParams(mu=cfg.ou_mu, gamma=cfg.ou_gamma, x0=cfg.ou_x0, T=cfg.ou_T, dt=cfg.ou_dt,
                       N=cfg.ou_N)


def allee_setup(cfg: ExperimentConfig) -> lat.AlleeSetup:
    return lat.AlleeSetup(cfg.I, cfg.J, cfg.Pm, cfg.p0, tuple(cfg.times), cfg.placement)


def scratch_setup(cfg: ExperimentConfig) -> lat.ScratchSetup:
    if cfg.I == 80:
        return lat.ScratchSetup(cfg.I, cfg.J, times=tuple(cfg.times), placement=cfg.placement)
    return lat.ScratchSetup.scaled(cfg.I, cfg.J, times=tuple(cfg.times), placement=cfg.placement)


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Models, prior, discrepancy and one synthetic observed dataset for ``cfg``."""
    data_rng = Streams(cfg.seed).rng(STREAM_DATA)
    truth = np.asarray(cfg.truth, dtype=float)
    kind = cfg.problem
    if kind == "ou":
        names = ("mu", "D") if cfg.ou_joint else ("D",)
        base = _ou_base(cfg)
        gen = ou._params_for(base, names, truth) if truth.size else base
        observed = ou.ou_observed_data(gen, data_rng, cfg.ou_exact_data)
        return Problem(names, ou.ou_exact_model(base, names), ou.ou_stationary_model(base, names),
                       ou.ou_prior(names, cfg.ou_D_max), ou.ou_discrepancy(observed, names),
                       observed, truth)
    if kind == "allee":
        setup = allee_setup(cfg)
        observed = setup.simulate(truth, data_rng)
        return Problem(("lambda", "A", "K"), lat.allee_model(setup),
                       allee_ode_model(setup, cfg.ode_tol), lat.allee_prior(),
                       lat.allee_discrepancy(observed), observed, truth, extra={"setup": setup})
    if kind == "scratch":
        setup = scratch_setup(cfg)
        observed = setup.simulate(truth, data_rng)
        return Problem(("lambda", "D", "K"), lat.scratch_model(setup),
                       fisher_kpp_model(setup, tol=cfg.pde_tol), lat.scratch_prior(),
                       lat.scratch_discrepancy(observed), observed, truth, extra={"setup": setup})
    if kind == "toy":
        observed = truth.copy()
        return Problem(("theta",), toy_identity_model(), toy_biased_model(),
                       BoxPrior([0.0], [1.0]), Discrepancy(observed), observed, truth)
    raise ConfigError(f"unknown problem {kind!r}")


def _identity(theta, rng):
    return np.array(theta, dtype=float)


def _shifted(theta, rng):
    return np.array(theta, dtype=float) + 0.1


def toy_identity_model() -> Model:
    return Model(_identity, EXACT, "identity")


def toy_biased_model() -> Model:
    """Cheap stand-in that is deliberately biased by +0.1."""
    return Model(_shifted, APPROX, "identity-plus-0.1")


def run_sampler(cfg: ExperimentConfig, prob: Problem, streams=None, alpha=None) -> SamplerReport:
    streams = Streams(cfg.seed) if streams is None else streams
    sched = cfg.schedule()
    if cfg.method == "rejection":
        model = prob.approx if cfg.approx_only else prob.exact
        return rejection_report(model, prob.prior, prob.rho, sched.final, cfg.M, streams,
                                cfg.max_attempts)
    if cfg.method == "smc":
        model = prob.approx if cfg.approx_only else prob.exact
        return smc_abc(model, prob.prior, prob.rho, sched, cfg.M, streams, cfg.max_attempts)
    if cfg.method == "pc-smc":
        return pc_smc_abc(prob.exact, prob.approx, prob.prior, prob.rho, sched, cfg.M, streams,
                          cfg.max_attempts)
    return mm_smc_abc(prob.exact, prob.approx, prob.prior, prob.rho, sched, cfg.M,
                      cfg.alpha if alpha is None else alpha, streams, cfg.max_attempts)


def _write_matrix(path, data, header=None) -> None:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def run_experiment(cfg: ExperimentConfig, out_dir) -> SamplerReport:
    """Run one inference; writes config, observed data, truth, report and population CSVs."""
    if not cfg.kind.endswith("-infer"):
        raise ConfigError(f"{cfg.kind!r} is not an inference experiment")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prob = build_problem(cfg)
    report = run_sampler(cfg, prob)
    report.meta.update({"experiment": cfg.kind, "seed": cfg.seed,
                        "approx_only": cfg.approx_only, "parameters": list(prob.names)})
    cfg.write(out / "config.ini")
    obs = prob.observed
    _write_matrix(out / "observed.csv", obs if obs.ndim == 2 else obs[None, :])
    (out / "truth.json").write_text(json.dumps(dict(zip(prob.names, prob.truth.tolist())),
                                               indent=2, sort_keys=True) + "\n")
    report.write(out, prob.names)
    return report


def speedup_from_reports(baseline_json, variant_json) -> float:
    """Ratio of persisted exact-simulation counts, baseline over variant."""
    a = json.loads(Path(baseline_json).read_text())
    b = json.loads(Path(variant_json).read_text())
    return a["exact_sim_count"] / b["exact_sim_count"]


# alpha benchmark -------------------------------------------------------------

@dataclass(frozen=True)
class BenchRecord:
    alpha: float
    rep: int
    cost_seconds: float
    error: float
    exact_sims: int
    approx_sims: int


BENCH_COLUMNS = ("alpha", "rep", "cost_seconds", "error", "exact_sims", "approx_sims")


def bench_alpha(cfg: ExperimentConfig, reference: WeightedPopulation | None,
                out_dir=None) -> list[BenchRecord]:
    """MM-SMC-ABC over the alpha sequence, cfg.reps independent runs each.

    Error compares raw moments of the reference SMC-ABC particles with the
    final (resampled, equally weighted) MM-SMC-ABC population, up to order
    cfg.P. The pooled set before resampling is not used because its exact
    subset carries importance weights that raw sample moments would ignore.
    """
    if reference is None:
        raise ConfigError("alpha benchmark needs a reference SMC-ABC population")
    prob = build_problem(cfg)
    root = Streams(cfg.seed)
    records = []
    for k, alpha in enumerate(cfg.alphas):
        for rep in range(cfg.reps):
            rep_cfg = replace(cfg, method="mm-smc")
            report = run_sampler(rep_cfg, prob, root.child(100 + k, rep), alpha=alpha)
            err = moment_error(reference.particles, report.final.particles, cfg.P)
            records.append(BenchRecord(float(alpha), rep, report.wall_time, err,
                                       report.exact_sim_count, report.approx_sim_count))
    if out_dir is not None:
        write_bench(records, out_dir)
    return records


def bench_summary(records) -> list[dict]:
    rows = []
    for alpha in dict.fromkeys(r.alpha for r in records):
        sub = [r for r in records if r.alpha == alpha]
        n = len(sub)
        err = np.array([r.error for r in sub])
        cost = np.array([r.cost_seconds for r in sub])
        se = (lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"))
        rows.append({"alpha": alpha, "n": n, "cost_mean": float(cost.mean()), "cost_se": se(cost),
                     "error_mean": float(err.mean()), "error_se": se(err)})
    return rows


def write_bench(records, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "bench.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in records:
            w.writerow([repr(r.alpha), r.rep, repr(r.cost_seconds), repr(r.error), r.exact_sims,
                        r.approx_sims])
    summary = out / "bench_summary.csv"
    rows = bench_summary(records)
    with open(summary, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return table, summary


def load_reference(path) -> WeightedPopulation:
    pop, _ = read_population_csv(path)
    return pop


# forwards simulation ---------------------------------------------------------

def simulate_forwards(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Single realization, ensemble average and continuum solution at the truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.problem
    truth = np.asarray(cfg.truth, dtype=float)
    root = Streams(cfg.seed)
    written = []

    def emit(name, data, header=None):
        p = out / name
        _write_matrix(p, data, header)
        written.append(p)

    if kind == "allee":
        setup = allee_setup(cfg)
        times = np.asarray(setup.times)
        runs = [setup.simulate(truth, root.rng(STREAM_DATA, k)) for k in range(cfg.realizations)]
        emit("growth_single.csv", np.column_stack([times, runs[0]]), ["t", "density"])
        emit("growth_ensemble.csv", np.column_stack([times, np.mean(runs, axis=0)]),
             ["t", "density"])
        emit("growth_continuum.csv", np.column_stack([times, allee_ode_solve(truth, setup,
                                                                             cfg.ode_tol)]),
             ["t", "density"])
    elif kind == "scratch":
        setup = scratch_setup(cfg)
        runs = [setup.simulate(truth, root.rng(STREAM_DATA, k)) for k in range(cfg.realizations)]
        header = [f"t={t:g}" for t in setup.times]
        emit("profile_single.csv", runs[0], header)
        emit("profile_ensemble.csv", np.mean(runs, axis=0), header)
        emit("profile_continuum.csv", fisher_kpp_model_solve(truth, setup, tol=cfg.pde_tol),
             header)
    elif kind == "ou":
        prob = build_problem(cfg)
        emit("ou_observed.csv", prob.observed[:, None], ["x_T"])
        mean, var = ou.ou_transient_params(ou._params_for(_ou_base(cfg), prob.names, truth))
        emit("ou_transient.csv", [[mean, var]], ["mean", "variance"])
    else:
        raise ConfigError(f"no forwards simulation for {kind!r}")
    cfg.write(out / "config.ini")
    return written

