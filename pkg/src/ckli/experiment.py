"""Replicated synthetic experiments: reference -> observations -> estimates -> errors."""
from __future__ import annotations

import csv
import io
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, fv
from .config import ExperimentConfig
from .ensemble import EnsembleConfig, build_u_ckle, build_u_model
from .fields import derive_seed, generate_reference, relative_lp_error, sample_observations
from .gpr import condition, fit_hyperparameters, prior_model
from .grid import build_grid
from .inverse import InversionConfig, invert
from .io import dumps_json, field_to_csv
from .kle import decompose
from .latent import BinaryFieldSpec, classify_latent, invert_binary, latent_to_y
from .map_baseline import MapConfig, map_invert

log = logging.getLogger(__name__)

FULL = "Full"
SUBSAMPLED = "Subsampled"


def versions() -> dict:
    return {"ckli": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


@dataclass
class ReplicaResult:
    index: int
    seed: int
    metrics: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    def record(self, method, variant, y_ref, y_est, u_ref=None, u_est=None, **extra):
        key = f"{method}/{variant}"
        m = {
            "y_rel_l2": relative_lp_error(y_ref, y_est, 2),
            "y_rel_l1": relative_lp_error(y_ref, y_est, 1),
        }
        if u_ref is not None and u_est is not None:
            m["u_rel_l2"] = relative_lp_error(u_ref, u_est, 2)
        self.metrics[key] = m
        if extra:
            self.info[key] = extra
        self.fields[f"y_{method}_{variant}"] = y_est


def binary_reference(spec: BinaryFieldSpec, f, reference_epsilon: float) -> np.ndarray:
    """Two-facies field from a latent draw; ``reference_epsilon == 0`` gives an exact step."""
    if reference_epsilon == 0:
        return np.where(np.asarray(f) > 0, spec.y1, spec.y2)
    return latent_to_y(BinaryFieldSpec(spec.y1, spec.y2, reference_epsilon), f)


def _pickle_runs(out, method, kernel, y_obs, u_obs, op, cfg, ens_cfg, cache_dir, y_ref, u_ref):
    y_ckle = decompose(condition(prior_model(op.grid, kernel), y_obs), max_terms=cfg.n_xi)
    u_model = build_u_model(y_ckle, op, ens_cfg, cache_dir=cache_dir)
    u_ckle = build_u_ckle(u_model, u_obs, cfg.n_eta)
    inv_cfg = InversionConfig(cfg.gamma, cfg.max_iters, cfg.grad_tol, None, None, cfg.optimizer)
    variants = [(FULL, op)]
    if cfg.subsample_factor > 1:
        variants.append((SUBSAMPLED, fv.subsample_residuals(op, cfg.subsample_factor)))
    for variant, rop in variants:
        res = invert(y_ckle, u_ckle, rop, inv_cfg)
        out.record(
            method, variant, y_ref, res.y_est, u_ref, res.u_est,
            n_xi_used=y_ckle.n_terms, n_eta_used=u_ckle.n_terms, **res.summary(),
        )


class ReplicaError(RuntimeError):
    def __init__(self, index: int, seed: int, cause: Exception):
        super().__init__(f"replica {index} (seed {seed}): {type(cause).__name__}: {cause}")
        self.index, self.seed, self.cause = index, seed, cause


def run_replica(cfg: ExperimentConfig, index: int, cache_dir=None) -> ReplicaResult:
    try:
        return _run_replica(cfg, index, cache_dir)
    except ReplicaError:
        raise
    except Exception as exc:
        raise ReplicaError(index, cfg.seed + index, exc) from exc


def _run_replica(cfg: ExperimentConfig, index: int, cache_dir=None) -> ReplicaResult:
    seed = cfg.seed + index
    out = ReplicaResult(index, seed)
    grid = build_grid(cfg.nx, cfg.ny)
    op = fv.residual_operator(grid)
    ens_cfg = EnsembleConfig(cfg.n_ens, derive_seed(seed, "ensemble"))
    continuous = [m for m in cfg.methods if m != "binary"]
    if continuous:
        y_ref = generate_reference(cfg.kernel, grid, derive_seed(seed, "reference"))
        u_ref = fv.solve(op, y_ref)
        y_obs = sample_observations(y_ref, grid, cfg.n_y_obs, derive_seed(seed, "y_obs"))
        u_obs = sample_observations(u_ref, grid, cfg.n_u_obs, derive_seed(seed, "u_obs"))
        out.fields["y_ref"] = y_ref
        out.fields["u_ref"] = u_ref
        if "cKLI" in cfg.methods:
            _pickle_runs(out, "cKLI", cfg.kernel, y_obs, u_obs, op, cfg, ens_cfg, cache_dir, y_ref, u_ref)
        if "cKLI-theta" in cfg.methods:
            fitted = fit_hyperparameters(cfg.kernel.family, y_obs, cfg.fit_starts, derive_seed(seed, "fit"))
            out.info["fitted_kernel"] = fitted.to_dict()
            _pickle_runs(out, "cKLI-theta", fitted, y_obs, u_obs, op, cfg, ens_cfg, cache_dir, y_ref, u_ref)
        if "MAP" in cfg.methods:
            res = map_invert(y_obs, u_obs, op, MapConfig(cfg.map_gamma, cfg.map_max_iters, cfg.grad_tol, cfg.map_optimizer))
            out.record("MAP", FULL, y_ref, res.y_est, u_ref, res.u_est, **res.summary())
    if "binary" in cfg.methods:
        b = cfg.binary
        spec = BinaryFieldSpec(b.y1, b.y2, b.epsilon)
        f_ref = generate_reference(cfg.kernel, grid, derive_seed(seed, "binary_reference"))
        y_ref = binary_reference(spec, f_ref, b.reference_epsilon)
        u_ref = fv.solve(op, y_ref)
        y_obs = sample_observations(y_ref, grid, cfg.n_y_obs, derive_seed(seed, "binary_y_obs"))
        u_obs = sample_observations(u_ref, grid, cfg.n_u_obs, derive_seed(seed, "binary_u_obs"))
        latent = classify_latent(y_obs, spec, cfg.kernel, grid)
        inv_cfg = InversionConfig(cfg.gamma, cfg.max_iters, cfg.grad_tol, b.n_xi, b.n_eta, cfg.optimizer)
        res = invert_binary(latent, spec, u_obs, op, inv_cfg, ens_cfg, cache_dir=cache_dir, y_obs=y_obs)
        out.fields["y_ref_binary"] = y_ref
        out.record("binary-PICKLE", FULL, y_ref, res.y_est, u_ref, res.u_est, **res.summary())
        mres = map_invert(y_obs, u_obs, op, MapConfig(cfg.map_gamma, cfg.map_max_iters, cfg.grad_tol, cfg.map_optimizer))
        out.record("binary-MAP", FULL, y_ref, mres.y_est, u_ref, mres.u_est, **mres.summary())
    return out


def run_replicas(cfg: ExperimentConfig, threads: int = 1, cache_dir=None) -> list:
    indices = range(cfg.replicas)
    if threads <= 1:
        return [run_replica(cfg, k, cache_dir) for k in indices]
    with ThreadPoolExecutor(threads) as pool:
        futures = [pool.submit(run_replica, cfg, k, cache_dir) for k in indices]
        return [f.result() for f in futures]


def _quantiles(vals):
    v = np.asarray(vals, dtype=float)
    return float(np.median(v)), float(np.percentile(v, 25)), float(np.percentile(v, 75))


def aggregate(results: list) -> list:
    """Rows (method, metric, Full/Subsampled median and IQR, replica count, wins over MAP)."""
    keys = []
    for r in results:
        for k in r.metrics:
            if k not in keys:
                keys.append(k)
    methods = []
    for k in keys:
        m = k.split("/")[0]
        if m not in methods:
            methods.append(m)
    rows = []
    for method in methods:
        metrics = []
        for r in results:
            for k, v in r.metrics.items():
                if k.startswith(method + "/"):
                    metrics.extend(x for x in v if x not in metrics)
        baseline = "binary-MAP" if method.startswith("binary") else "MAP"
        for metric in metrics:
            row = {"method": method, "metric": metric}
            for variant in (FULL, SUBSAMPLED):
                vals = [r.metrics[f"{method}/{variant}"][metric] for r in results if f"{method}/{variant}" in r.metrics]
                if vals:
                    row[f"{variant}_median"], row[f"{variant}_q25"], row[f"{variant}_q75"] = _quantiles(vals)
                else:
                    row[f"{variant}_median"] = row[f"{variant}_q25"] = row[f"{variant}_q75"] = None
            full = [r for r in results if f"{method}/{FULL}" in r.metrics]
            row["n_replicas"] = len(full)
            if method != baseline and all(f"{baseline}/{FULL}" in r.metrics for r in full) and full:
                row["beats_baseline"] = sum(
                    r.metrics[f"{method}/{FULL}"][metric] < r.metrics[f"{baseline}/{FULL}"][metric] for r in full
                )
            else:
                row["beats_baseline"] = None
            rows.append(row)
    return rows


REPORT_COLUMNS = [
    "method", "metric",
    "Full_median", "Full_q25", "Full_q75",
    "Subsampled_median", "Subsampled_q25", "Subsampled_q75",
    "n_replicas", "beats_baseline",
]


def report_csv(rows: list, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def provenance(cfg: ExperimentConfig, seed=None) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": seed if seed is not None else cfg.seed, "versions": versions()}


def write_outputs(cfg: ExperimentConfig, results: list, out_dir) -> Path:
    run_dir = Path(out_dir) / cfg.run_id
    (run_dir / "fields").mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg.nx, cfg.ny)
    for r in results:
        prov = provenance(cfg, r.seed)
        payload = {"provenance": prov, "replica": r.index, "config": cfg.to_dict(), "metrics": r.metrics, "info": r.info}
        (run_dir / f"replica_{r.index}.json").write_text(dumps_json(payload))
        header = [f"config_hash={prov['config_hash']}", f"seed={r.seed}", f"versions={dumps_json(prov['versions']).strip().replace(chr(10), '')}"]
        for name, values in r.fields.items():
            safe = name.replace("/", "_")
            (run_dir / "fields" / f"replica_{r.index}_{safe}.csv").write_text(field_to_csv(grid, values, header))
    prov = provenance(cfg)
    header = [f"config_hash={prov['config_hash']}", f"seed={prov['seed']}", f"replicas={len(results)}"]
    (run_dir / "report.csv").write_text(report_csv(aggregate(results), header))
    return run_dir


def sweep_nxi(cfg: ExperimentConfig, nxi_values, threads: int = 1, cache_dir=None) -> list:
    """Median and spread of the relative l2 error per expansion size."""
    rows = []
    base = cfg.with_overrides(subsample_factor=1)
    map_results = None
    if "MAP" in cfg.methods:
        map_cfg = base.with_overrides(methods=("MAP",))
        map_results = run_replicas(map_cfg, threads, cache_dir)
    pickle_methods = tuple(m for m in cfg.methods if m in ("cKLI", "cKLI-theta"))
    for n_xi in nxi_values:
        results = run_replicas(base.with_overrides(n_xi=int(n_xi), methods=pickle_methods), threads, cache_dir) if pickle_methods else []
        for method in pickle_methods:
            key = f"{method}/{FULL}"
            vals = [r.metrics[key]["y_rel_l2"] for r in results]
            used = sorted({r.info[key]["n_xi_used"] for r in results})
            med, q25, q75 = _quantiles(vals)
            rows.append({"n_xi": int(n_xi), "n_xi_used": used[0] if len(used) == 1 else "/".join(map(str, used)),
                         "method": method, "median": med, "q25": q25, "q75": q75, "n": len(vals)})
        if map_results is not None:
            vals = [r.metrics[f"MAP/{FULL}"]["y_rel_l2"] for r in map_results]
            med, q25, q75 = _quantiles(vals)
            rows.append({"n_xi": int(n_xi), "n_xi_used": "", "method": "MAP", "median": med, "q25": q25, "q75": q75, "n": len(vals)})
    return rows


SWEEP_COLUMNS = ["n_xi", "n_xi_used", "method", "median", "q25", "q75", "n"]


def sweep_csv(rows: list, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in SWEEP_COLUMNS])
    return buf.getvalue()
