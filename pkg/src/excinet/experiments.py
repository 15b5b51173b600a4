"""Reproducible studies on the FMO-like network.

Every study is a pure function of its inputs and returns an
:class:`ExperimentReport` whose rows can be written straight to CSV. Rows that
depend on an optimization carry a ``status`` column; a diverged optimizer
marks its row ``failed`` instead of aborting the study.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .liouville import (
    NumericalError,
    basis_state,
    liouvillian,
    physicality,
    propagate_trajectory,
    pure_state,
    sink_population,
    trajectory_rows,
)
from .network import (
    GAMMA_REF,
    H_REF,
    HBAR_CM,
    HBAR_EV,
    ChainSpec,
    NetworkSpec,
    SpecError,
    extend_with_chain,
    random_couplings,
    remove_node,
)
from .optimize import OptimizerConfig, OptimizerDivergence, SinkObjective, rmsprop_minimize

log = logging.getLogger(__name__)

CONDITIONS = {"gamma_ref": GAMMA_REF, "one": 1.0, "zero": 0.0}
# reported unoptimized final sink populations (T = 5) used by the calibration
REFERENCE_UNOPTIMIZED = {"gamma_ref": 0.955, "one": 0.922, "zero": 0.639}
HBAR_CANDIDATES = (1.0, HBAR_EV, HBAR_CM)

DEFAULT_OPTIMIZER = OptimizerConfig(patience=200)
SWEEP_GAMMAS = np.linspace(0.0, 20.0, 41)
TRAJECTORY_SAMPLES = 512
BACKFLOW_WARNING = 0.01


@dataclass
class ExperimentReport:
    name: str
    params: dict
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    children: list[ExperimentReport] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return io.columns_of(self.rows)

    def column(self, key: str) -> list:
        return [row.get(key) for row in self.rows]

    def to_csv(self, path) -> Path:
        return io.write_csv(path, self.rows)

    def write(self, directory) -> list[Path]:
        """Write this report and its children as ``<name>.csv`` files."""
        directory = Path(directory)
        paths = [self.to_csv(directory / f"{self.name}.csv")]
        for child in self.children:
            paths += child.write(directory)
        return paths


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("EXCINET_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    workers = thread_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def dephasing_vector(spec: NetworkSpec, condition) -> np.ndarray:
    """Per-site dephasing rates for a named condition or a uniform value."""
    if isinstance(condition, str):
        if condition not in CONDITIONS:
            raise ValueError(f"unknown dephasing condition {condition!r}")
        condition = CONDITIONS[condition]
    gammas = np.asarray(condition, dtype=float)
    return np.broadcast_to(gammas, (spec.n_sites,)).copy()


def _energy_columns(h) -> dict:
    return {f"h{n + 1}": float(x) for n, x in enumerate(h)}


def final_sink_population(spec: NetworkSpec, T: float, h=None) -> float:
    h = spec.local_energies if h is None else h
    return SinkObjective(spec, T).value(h)


def _optimize(spec: NetworkSpec, T: float, config: OptimizerConfig):
    """Optimize from zero energies; ``(result, status)`` with ``result=None`` on failure."""
    try:
        return rmsprop_minimize(spec, T, config), "ok"
    except (OptimizerDivergence, NumericalError) as exc:
        log.warning("optimization failed: %s", exc)
        return None, "failed"


def calibrate_hbar(
    spec: NetworkSpec,
    candidates=HBAR_CANDIDATES,
    T: float = 5.0,
    tolerance: float = 0.015,
) -> ExperimentReport:
    """Unoptimized ``r_s(T)`` for each hbar candidate against the reference values."""
    rows = []
    passing = []
    worst = {}
    for hbar in candidates:
        ok = True
        for cond, target in REFERENCE_UNOPTIMIZED.items():
            s = spec.replace(hbar=hbar, local_energies=np.zeros(spec.n_sites), dephasing_rates=dephasing_vector(spec, cond))
            t0 = time.perf_counter()
            r_s = final_sink_population(s, T)
            elapsed = time.perf_counter() - t0
            dev = r_s - target
            ok &= abs(dev) <= tolerance
            worst[hbar] = max(worst.get(hbar, 0.0), abs(dev))
            rows.append(
                {
                    "hbar": hbar,
                    "rate_factor": spec.rate_factor,
                    "condition": cond,
                    "r_s": r_s,
                    "target": target,
                    "deviation": dev,
                    "within_tolerance": abs(dev) <= tolerance,
                    "seconds": elapsed,
                }
            )
        if ok:
            passing.append(hbar)
    best = min(worst, key=worst.get)
    return ExperimentReport(
        name="calibration",
        params={"T": T, "tolerance": tolerance, "rate_factor": spec.rate_factor, "candidates": list(candidates)},
        rows=rows,
        summary={"passing": passing, "best": best, "max_deviation": worst},
    )


def table1(spec: NetworkSpec, T: float = 5.0, config: OptimizerConfig | None = None) -> ExperimentReport:
    """Final sink population with zero and with optimized energies, per dephasing condition."""
    config = config or DEFAULT_OPTIMIZER
    n = spec.n_sites

    def run(cond):
        s = spec.replace(local_energies=np.zeros(n), dephasing_rates=dephasing_vector(spec, cond))
        r0 = final_sink_population(s, T)
        result, status = _optimize(s, T, config)
        base = {"condition": cond, "T": T}
        rows = [{**base, "energies": "h0", "r_s": r0, "status": "ok", "iterations": 0, **_energy_columns(np.zeros(n))}]
        if result is None:
            rows.append({**base, "energies": "opt", "r_s": float("nan"), "status": status, "iterations": 0})
        else:
            rows.append(
                {
                    **base,
                    "energies": "opt",
                    "r_s": result.r_s,
                    "status": status,
                    "iterations": len(result.learning_curve),
                    **_energy_columns(result.h_opt),
                }
            )
        return rows

    rows = [row for pair in parallel_map(run, CONDITIONS) for row in pair]
    return ExperimentReport(
        name="table1",
        params={"T": T, "optimizer": _config_params(config)},
        rows=rows,
        summary={"h_opt": {cond: h.tolist() for cond, h in optimal_energies_from_rows(rows, n).items()}},
    )


def _config_params(config: OptimizerConfig) -> dict:
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


def optimal_energies_from_rows(rows, n_sites: int) -> dict:
    out = {}
    for row in rows:
        if row.get("energies") == "opt" and row.get("status") == "ok":
            out[row["condition"]] = np.array([float(row[f"h{k + 1}"]) for k in range(n_sites)])
    return out


def optimal_energies(report: ExperimentReport) -> dict:
    """Optimized energy vectors of a :func:`table1` report, keyed by condition."""
    return {cond: np.array(h) for cond, h in report.summary["h_opt"].items()}


def dephasing_sweep(
    spec: NetworkSpec,
    gammas=None,
    optimize_each: bool = True,
    T: float = 5.0,
    config: OptimizerConfig | None = None,
) -> ExperimentReport:
    """Final sink population under uniform dephasing ``gamma`` on every site."""
    gammas = SWEEP_GAMMAS if gammas is None else np.asarray(gammas, dtype=float)
    if gammas.size == 0 or np.any(gammas < 0):
        raise ValueError("the dephasing grid must be nonempty and nonnegative")
    config = config or DEFAULT_OPTIMIZER
    n = spec.n_sites

    def run(gamma):
        s = spec.replace(local_energies=np.zeros(n), dephasing_rates=np.full(n, gamma))
        row = {"gamma": float(gamma), "T": T, "r_s_h0": final_sink_population(s, T)}
        if optimize_each:
            result, status = _optimize(s, T, config)
            row["r_s_opt"] = result.r_s if result else float("nan")
            row["status"] = status
            if result:
                row.update(_energy_columns(result.h_opt))
        return row

    rows = parallel_map(run, gammas)
    return ExperimentReport(
        name="dephasing_sweep",
        params={"T": T, "optimize_each": optimize_each, "n_points": int(gammas.size)},
        rows=rows,
    )


def compare_reference(
    spec: NetworkSpec,
    h_opt,
    T: float = 5.0,
    h_ref=H_REF,
    n_samples: int = TRAJECTORY_SAMPLES,
) -> ExperimentReport:
    """Sink-population trajectories for the reference and optimized energies under ``gamma_ref``."""
    s = spec.with_dephasing(GAMMA_REF)
    times = np.linspace(0.0, T, n_samples)
    r0 = basis_state(s.dim, s.initial_index)
    traj = {}
    for label, h in (("ref", h_ref), ("opt", h_opt)):
        states = propagate_trajectory(liouvillian(s.with_energies(h)), r0, times)
        traj[label] = [sink_population(r) for r in states]
    rows = [
        {"t": float(t), "r_s_ref": a, "r_s_opt": b, "opt_ge_ref": bool(b >= a)}
        for t, a, b in zip(times, traj["ref"], traj["opt"])
    ]
    later = [row["opt_ge_ref"] for row in rows if row["t"] > 0]
    return ExperimentReport(
        name="compare_reference",
        params={"T": T, "n_samples": n_samples, "h_ref": list(h_ref), "h_opt": list(map(float, h_opt))},
        rows=rows,
        summary={
            "dominates_all": bool(all(later)),
            "r_s_ref_T": traj["ref"][-1],
            "r_s_opt_T": traj["opt"][-1],
        },
    )


def _site_scan(specs, T, key):
    rows = [{key: label, "r_s": final_sink_population(s, T)} for label, s in specs]
    values = [row["r_s"] for row in rows]
    k = int(np.argmin(values))
    return rows, {"min_r_s": values[k], "argmin": rows[k][key]}


def resilience_initial_sites(spec: NetworkSpec, h_opt, gammas, T: float = 5.0) -> ExperimentReport:
    """``r_s(T)`` for every initial site that is not a sink site."""
    s = spec.replace(local_energies=h_opt, dephasing_rates=np.broadcast_to(gammas, (spec.n_sites,)))
    specs = [(i, s.replace(initial_site=i)) for i in s.network_indices if i not in s.sink_sites]
    rows, summary = _site_scan(specs, T, "initial_site")
    return ExperimentReport(
        name="resilience_initial",
        params={"T": T, "sink_sites": list(s.sink_sites), "gammas": list(s.dephasing_rates)},
        rows=rows,
        summary=summary,
    )


def resilience_sink_sites(spec: NetworkSpec, h_opt, gammas, T: float = 5.0) -> ExperimentReport:
    """``r_s(T)`` for every single sink site other than the initial site."""
    s = spec.replace(local_energies=h_opt, dephasing_rates=np.broadcast_to(gammas, (spec.n_sites,)))
    specs = [(m, s.replace(sink_sites=(m,))) for m in s.network_indices if m != s.initial_site]
    rows, summary = _site_scan(specs, T, "sink_site")
    return ExperimentReport(
        name="resilience_sink",
        params={"T": T, "initial_site": s.initial_site, "gammas": list(s.dephasing_rates)},
        rows=rows,
        summary=summary,
    )


def dual_sink(spec: NetworkSpec, h_opt, gammas, sink_pair=(3, 7), T: float = 5.0) -> ExperimentReport:
    """``r_s(T)`` with the sink fed from two sites, next to the single-sink value."""
    pair = tuple(int(m) for m in sink_pair)
    if len(pair) != 2 or pair[0] == pair[1]:
        raise SpecError(f"dual_sink: need two distinct sink sites, got {pair}")
    s = spec.replace(local_energies=h_opt, dephasing_rates=np.broadcast_to(gammas, (spec.n_sites,)))
    dual = s.replace(sink_sites=pair)
    rows = [
        {"sink_sites": list(s.sink_sites), "r_s": final_sink_population(s, T)},
        {"sink_sites": list(dual.sink_sites), "r_s": final_sink_population(dual, T)},
    ]
    return ExperimentReport(
        name="dual_sink",
        params={"T": T, "sink_pair": list(pair), "gammas": list(s.dephasing_rates)},
        rows=rows,
        summary={"single_r_s": rows[0]["r_s"], "dual_r_s": rows[1]["r_s"]},
    )


def sample_seeds(seed: int, n_samples: int) -> list[np.random.SeedSequence]:
    """Per-sample seeds; the first ``k`` are the same for any ``n_samples >= k``."""
    return np.random.SeedSequence(seed).spawn(n_samples)


def random_coupling_study(
    spec: NetworkSpec,
    h_opt,
    gammas,
    n_samples: int = 1000,
    lo: float = -200.0,
    hi: float = 200.0,
    seed: int = 0,
    T: float = 5.0,
) -> ExperimentReport:
    """``r_s(T)`` at fixed energies for randomly drawn coupling matrices."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    s = spec.replace(local_energies=h_opt, dephasing_rates=np.broadcast_to(gammas, (spec.n_sites,)))

    def run(item):
        k, ss = item
        J = random_couplings(s.n_sites, lo, hi, ss)
        return {"sample": k, "r_s": final_sink_population(s.replace(couplings=J), T)}

    rows = parallel_map(run, enumerate(sample_seeds(seed, n_samples)))
    values = np.array([row["r_s"] for row in rows])
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    summary = {"min": float(values.min()), "max": float(values.max())}
    summary.update({f"q{int(q * 100):02d}": float(np.quantile(values, q)) for q in qs})
    return ExperimentReport(
        name="random_couplings",
        params={"T": T, "n_samples": n_samples, "lo": lo, "hi": hi, "seed": seed, "gammas": list(s.dephasing_rates)},
        rows=rows,
        summary=summary,
    )


def node_removal_study(
    spec: NetworkSpec,
    gammas,
    T: float = 5.0,
    config: OptimizerConfig | None = None,
    min_sites: int = 3,
) -> ExperimentReport:
    """Remove sites one at a time, keeping the removal whose re-optimized
    transfer is worst, until ``min_sites`` remain.
    """
    config = config or DEFAULT_OPTIMIZER
    current = spec.replace(
        local_energies=np.zeros(spec.n_sites),
        dephasing_rates=np.broadcast_to(gammas, (spec.n_sites,)),
    )
    labels = list(current.network_indices)
    result, status = _optimize(current, T, config)
    rows = [
        {
            "removed": 0,
            "removed_site": "",
            "remaining": list(labels),
            "r_s_opt": result.r_s if result else float("nan"),
            "status": status,
        }
    ]
    candidate_rows = []
    step = 0
    while current.n_sites > min_sites:
        step += 1
        legal = [k for k in current.network_indices if k != current.initial_site and k not in current.sink_sites]

        def run(k, current=current):
            reduced = remove_node(current, k).with_energies(np.zeros(current.n_sites - 1))
            res, st = _optimize(reduced, T, config)
            return reduced, res, st

        outcomes = parallel_map(lambda k: (k, *run(k)), legal)
        for k, _, res, st in outcomes:
            candidate_rows.append(
                {"step": step, "candidate": labels[k - 1], "r_s_opt": res.r_s if res else float("nan"), "status": st}
            )
        ok = [(res.r_s, k, reduced) for k, reduced, res, st in outcomes if res is not None]
        if not ok:
            rows.append({"removed": step, "removed_site": "", "remaining": list(labels), "r_s_opt": float("nan"), "status": "failed"})
            break
        r_s, k, current = min(ok, key=lambda x: x[0])
        removed = labels.pop(k - 1)
        rows.append({"removed": step, "removed_site": removed, "remaining": list(labels), "r_s_opt": r_s, "status": "ok"})

    return ExperimentReport(
        name="node_removal",
        params={"T": T, "gammas": list(np.broadcast_to(gammas, (spec.n_sites,))), "optimizer": _config_params(config)},
        rows=rows,
        children=[ExperimentReport(name="node_removal_candidates", params={}, rows=candidate_rows)],
    )


def coherence_study(
    spec: NetworkSpec,
    h_opts: dict,
    chain: ChainSpec | None = None,
    T: float = 10.0,
    n_samples: int = TRAJECTORY_SAMPLES,
    method: str = "auto",
) -> ExperimentReport:
    """Population and l1-coherence dynamics with a chain in place of the sink.

    ``h_opts`` maps a dephasing condition (name or uniform rate) to the site
    energies to use. The system starts in ``(|1> + |8>)/sqrt(2)``.
    """
    chain = chain or ChainSpec.matched_to_sink(spec)
    times = np.linspace(0.0, T, n_samples)
    summary_rows = []
    children = []
    for cond, h in h_opts.items():
        net = spec.replace(local_energies=h, dephasing_rates=dephasing_vector(spec, cond))
        ext = extend_with_chain(net, chain)
        psi = np.zeros(ext.dim)
        psi[net.initial_index] = 1.0
        if ext.extra_index is not None:
            psi[ext.extra_index] = 1.0
        states = propagate_trajectory(liouvillian(ext), pure_state(psi), times, method=method)
        rows = trajectory_rows(ext, times, states)
        p_c = np.array([row["p_C"] for row in rows])
        backflow = float(max(0.0, -np.diff(p_c).min())) if p_c.size > 1 else 0.0
        checks = [physicality(r) for r in states]
        n_tot = ext.n_sites + chain.n_chain
        C0, CT = rows[0]["C"], rows[-1]["C"]
        summary_rows.append(
            {
                "condition": cond,
                "C_0": C0,
                "C_T": CT,
                "c_initial": C0 / 2.0,
                "c_final": CT / n_tot,
                "C_8_0": rows[0]["C_8"],
                "C_8_T": rows[-1]["C_8"],
                "p_C_T": rows[-1]["p_C"],
                "max_backflow": backflow,
                "backflow_warning": backflow > BACKFLOW_WARNING,
                "trace_error": max(c["trace_error"] for c in checks),
                "hermiticity_error": max(c["hermiticity_error"] for c in checks),
                "min_eigenvalue": min(c["min_eigenvalue"] for c in checks),
                # trace(rho^2) for Hermitian rho
                "min_purity": min(float(np.sum(np.abs(r.data) ** 2)) for r in states),
            }
        )
        if backflow > BACKFLOW_WARNING:
            log.warning("chain back-flow %.3g for %s: chain too short to act as a sink", backflow, cond)
        children.append(ExperimentReport(name=f"coherence_{cond}", params={"condition": cond}, rows=rows))
    return ExperimentReport(
        name="coherence",
        params={
            "T": T,
            "n_samples": n_samples,
            "n_chain": chain.n_chain,
            "chain_coupling": chain.chain_coupling,
            "bridge_coupling": chain.bridge_coupling,
        },
        rows=summary_rows,
        children=children,
    )

