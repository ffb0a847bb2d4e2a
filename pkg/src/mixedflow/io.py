"""File formats.

Dataset files: line-delimited JSON, one dataset per record, gzip-compressed
when the path ends in .gz. Record field order: schema, id, d, q, m,
group_sizes, x (row-major over unmasked observations), y, prior, truth.
The random-effect design is not stored: it mirrors the first q columns of
x by construction.

Posterior draw files: same container style, one record per dataset with
the k-by-parameter draw blocks, flow log densities, the standardization
record, optional importance weights and optional interval tables.

Observation CSV: one row per observation with columns
group_id, y, x_1..x_p; the intercept column is synthesized, so the model
dimension is d = p + 1. Categorical predictors must arrive pre-encoded.

Run manifests: a JSON sidecar recording command, configuration hash, seed
and library versions, so artifacts can be regenerated byte-for-byte.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .draws import PosteriorDraws
from .errors import ConfigError, DataFormatError
from .simulate import GlobalParams, HierDataset, LocalParams, PriorSpec, Truth
from .standardize import StandardizationRecord

__all__ = [
    "save_datasets", "load_datasets", "dataset_to_record", "dataset_from_record",
    "save_draws", "load_draws", "draws_to_record", "draws_from_record",
    "read_observations_csv", "write_manifest", "config_hash",
]

DATASET_SCHEMA = "hier-dataset/1"
DRAWS_SCHEMA = "posterior-draws/1"


def _open(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


# ---------------------------------------------------------------------------
# datasets


def dataset_to_record(ds: HierDataset) -> dict:
    rec = {
        "schema": DATASET_SCHEMA,
        "id": ds.dataset_id,
        "d": ds.d, "q": ds.q, "m": ds.m,
        "group_sizes": ds.group_sizes.tolist(),
        "x": ds.X[ds.mask].reshape(-1).tolist(),
        "y": ds.y[ds.mask].tolist(),
        "prior": None,
        "truth": None,
    }
    if ds.truth is not None:
        p = ds.truth.prior
        rec["prior"] = {"nu_beta": p.nu_beta.tolist(), "tau_beta": p.tau_beta.tolist(),
                        "tau_sigma": p.tau_sigma.tolist(), "tau_eps": p.tau_eps}
        gp, lp = ds.truth.global_params, ds.truth.local_params
        rec["truth"] = {"beta": gp.beta.tolist(),
                        "sigma_alpha": gp.sigma_alpha.tolist(),
                        "sigma_eps": gp.sigma_eps,
                        "alpha": lp.alpha.reshape(-1).tolist(),
                        "noise": ds.truth.noise[ds.mask].tolist()}
    return rec


def dataset_from_record(rec: dict) -> HierDataset:
    if rec.get("schema") != DATASET_SCHEMA:
        raise DataFormatError(f"not a {DATASET_SCHEMA} record: schema={rec.get('schema')!r}")
    d, q, m = int(rec["d"]), int(rec["q"]), int(rec["m"])
    sizes = np.asarray(rec["group_sizes"], dtype=np.int64)
    if sizes.shape[0] != m:
        raise DataFormatError("group_sizes length disagrees with m")
    n_total = int(sizes.sum())
    x = np.asarray(rec["x"], dtype=np.float64)
    y_flat = np.asarray(rec["y"], dtype=np.float64)
    if x.size != n_total * d or y_flat.size != n_total:
        raise DataFormatError("x/y lengths disagree with group sizes")
    n_max = int(sizes.max())
    X = np.zeros((m, n_max, d))
    y = np.zeros((m, n_max))
    mask = np.arange(n_max)[None, :] < sizes[:, None]
    X[mask] = x.reshape(n_total, d)
    y[mask] = y_flat
    Z = np.zeros_like(X)
    Z[:, :, :q] = X[:, :, :q]
    truth = None
    if rec.get("truth") is not None:
        t = rec["truth"]
        p = rec["prior"]
        prior = PriorSpec(np.asarray(p["nu_beta"]), np.asarray(p["tau_beta"]),
                          np.asarray(p["tau_sigma"]), float(p["tau_eps"]))
        noise = np.zeros((m, n_max))
        noise[mask] = np.asarray(t["noise"], dtype=np.float64)
        truth = Truth(prior,
                      GlobalParams(np.asarray(t["beta"]), np.asarray(t["sigma_alpha"]),
                                   float(t["sigma_eps"])),
                      LocalParams(np.asarray(t["alpha"], dtype=np.float64).reshape(m, q)),
                      noise)
    return HierDataset(X=X, Z=Z, y=y, mask=mask, group_sizes=sizes, d=d, q=q, m=m,
                       truth=truth, dataset_id=str(rec.get("id", "")))


def save_datasets(path, datasets: list[HierDataset]):
    with _open(path, "w") as fh:
        for ds in datasets:
            fh.write(json.dumps(dataset_to_record(ds)) + "\n")


def load_datasets(path) -> list[HierDataset]:
    out = []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(dataset_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad dataset record ({exc})")
    if not out:
        raise DataFormatError(f"{path}: no dataset records")
    return out


# ---------------------------------------------------------------------------
# posterior draws


def draws_to_record(draws: PosteriorDraws, intervals: dict | None = None) -> dict:
    rec = {
        "schema": DRAWS_SCHEMA,
        "dataset_id": draws.dataset_id,
        "k": draws.k, "d": draws.d, "q": draws.q,
        "infer_noise": draws.infer_noise,
        "param_names": draws.param_names(),
        "global": draws.global_std.reshape(-1).tolist(),
        "log_q_global": draws.log_q_global.tolist(),
        "local": None, "log_q_local": None,
        "weights": None, "local_weights": None,
        "standardization": draws.rec.to_json(),
        "intervals": intervals,
    }
    if draws.local_std is not None:
        rec["local"] = draws.local_std.reshape(-1).tolist()
        rec["log_q_local"] = draws.log_q_local.reshape(-1).tolist()
        rec["m"] = draws.m
    if draws.weights is not None:
        rec["weights"] = draws.weights.tolist()
    if draws.local_weights is not None:
        rec["local_weights"] = draws.local_weights.reshape(-1).tolist()
    return rec


def draws_from_record(rec: dict) -> PosteriorDraws:
    if rec.get("schema") != DRAWS_SCHEMA:
        raise DataFormatError(f"not a {DRAWS_SCHEMA} record: schema={rec.get('schema')!r}")
    k, d, q = int(rec["k"]), int(rec["d"]), int(rec["q"])
    infer_noise = bool(rec["infer_noise"])
    p = d + q + (1 if infer_noise else 0)
    global_std = np.asarray(rec["global"], dtype=np.float64).reshape(k, p)
    local = log_q_local = weights = local_weights = None
    if rec.get("local") is not None:
        m = int(rec["m"])
        local = np.asarray(rec["local"], dtype=np.float64).reshape(k, m, q)
        log_q_local = np.asarray(rec["log_q_local"], dtype=np.float64).reshape(k, m)
        if rec.get("local_weights") is not None:
            local_weights = np.asarray(rec["local_weights"], dtype=np.float64).reshape(k, m)
    if rec.get("weights") is not None:
        weights = np.asarray(rec["weights"], dtype=np.float64)
    return PosteriorDraws(
        global_std=global_std,
        log_q_global=np.asarray(rec["log_q_global"], dtype=np.float64),
        d=d, q=q, infer_noise=infer_noise,
        rec=StandardizationRecord.from_json(rec["standardization"]),
        local_std=local, log_q_local=log_q_local,
        weights=weights, local_weights=local_weights,
        dataset_id=str(rec.get("dataset_id", "")))


def save_draws(path, records: list[dict]):
    with _open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_draws(path) -> list[tuple[PosteriorDraws, dict]]:
    """Returns (draws, full record) pairs so interval tables stay available."""
    out = []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append((draws_from_record(rec), rec))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad draw record ({exc})")
    if not out:
        raise DataFormatError(f"{path}: no draw records")
    return out


# ---------------------------------------------------------------------------
# observation CSV (real-data shaped)


def read_observations_csv(path, q: int) -> HierDataset:
    """Build a dataset from one-row-per-observation CSV with columns
    group_id, y, x_1..x_p (intercept synthesized as column 0)."""
    groups: dict[str, list[list[float]]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "group_id" \
                or header[1].strip() != "y":
            raise DataFormatError(f"{path}: expected header group_id,y,x_1..x_d")
        p = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 + p:
                raise DataFormatError(f"{path}:{lineno}: expected {2 + p} fields, got {len(row)}")
            try:
                gid = row[0].strip()
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value ({exc})")
            if gid not in groups:
                groups[gid] = []
                order.append(gid)
            groups[gid].append(vals)
    d = p + 1
    if q > d:
        raise ConfigError(f"q={q} exceeds d={d} (including the synthesized intercept)")
    m = len(order)
    sizes = np.array([len(groups[g]) for g in order], dtype=np.int64)
    n_max = int(sizes.max())
    X = np.zeros((m, n_max, d))
    y = np.zeros((m, n_max))
    mask = np.arange(n_max)[None, :] < sizes[:, None]
    for i, gid in enumerate(order):
        arr = np.asarray(groups[gid], dtype=np.float64)
        X[i, :sizes[i], 0] = 1.0
        X[i, :sizes[i], 1:] = arr[:, 1:]
        y[i, :sizes[i]] = arr[:, 0]
    Z = np.zeros_like(X)
    Z[:, :, :q] = X[:, :, :q]
    return HierDataset(X=X, Z=Z, y=y, mask=mask, group_sizes=sizes, d=d, q=q, m=m,
                       dataset_id=Path(path).stem)


# ---------------------------------------------------------------------------
# run manifests


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, command: str, config: dict, seed: int | None,
                   inputs: dict | None = None, outputs: list[str] | None = None):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "mixedflow": _package_version(),
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "inputs": inputs or {},
        "outputs": outputs or [],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _package_version() -> str:
    from . import __version__
    return __version__
