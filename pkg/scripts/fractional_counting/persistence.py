"""
Result files: CSV tables with a config-hash header line, TOML model and
tree files and the run manifest.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import toml

from .estimation.base import FractionalCounter, ModelError, ParamState
from .rolling.tree import TreeModel
from .simulation.base import Locality, PersonRecord, WorldTruth, address_lookup

try:
    import tomllib
except ImportError:
    try:
        import tomli as tomllib
    except ImportError:
        tomllib = None

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_hash="
MANIFEST_NAME = "manifest.toml"


class PersistenceError(Exception):
    """Exception raised for unreadable or mismatched result files."""

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None):
        super().__init__(message)
        self.path = str(path) if path is not None else None


def write_table(frame: pd.DataFrame, path: Union[str, Path], config_hash: str) -> Path:
    """Write a CSV table preceded by the config-hash comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def read_table(path: Union[str, Path]) -> Tuple[pd.DataFrame, str]:
    """
    Read a table written by write_table.

    Returns:
        (frame, config hash)
    """
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"Result table not found: {path}", path)
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    if not first.startswith(HASH_PREFIX):
        raise PersistenceError(f"{path} has no config hash header", path)
    return pd.read_csv(path, skiprows=1), first[len(HASH_PREFIX):]


def _plain(value: Any) -> Any:
    """Numpy values and containers as TOML-serialisable Python values; None is dropped."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def param_state_dict(state: ParamState, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "model": {
            "kind": state.kind,
            "n_covariates": state.n_covariates,
            "epoch": state.epoch,
            "beta_hat": state.beta_hat.tolist(),
            "sigma_hat": state.sigma_hat.tolist(),
        },
        "metadata": _plain(state.metadata),
    }
    if extra:
        data.update(_plain(extra))
    return data


def write_model(state: ParamState, path: Union[str, Path], config_hash: str,
                extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a fitted model as TOML: ``[model]`` holds kind, dimensions, epoch,
    coefficients and covariance; ``[metadata]`` the fit diagnostics; extra
    tables (e.g. ``[benchmark]``) are written as given.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"config_hash": config_hash, **_plain(param_state_dict(state, extra))}
    with open(path, "w", encoding="utf-8") as f:
        toml.dump(data, f)
    return path


def _load_toml(path: Path) -> Dict[str, Any]:
    if tomllib is None:
        raise ImportError("TOML support not available. Install tomli package for Python < 3.11")
    if not path.exists():
        raise PersistenceError(f"File not found: {path}", path)
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise PersistenceError(f"Invalid TOML in {path}: {e}", path)


def read_model(path: Union[str, Path]) -> ParamState:
    """Read a model file written by write_model."""
    data = _load_toml(Path(path))
    try:
        model = data["model"]
        return ParamState(
            kind=model["kind"],
            beta_hat=np.asarray(model["beta_hat"], dtype=float),
            sigma_hat=np.asarray(model["sigma_hat"], dtype=float),
            n_covariates=int(model["n_covariates"]),
            epoch=int(model.get("epoch", 0)),
            metadata=dict(data.get("metadata", {})),
        )
    except KeyError as e:
        raise PersistenceError(f"Model file {path} is missing {e.args[0]}", path)
    except ModelError as e:
        raise PersistenceError(f"Model file {path} is inconsistent: {e}", path)


def write_tree(model: TreeModel, path: Union[str, Path], config_hash: str) -> Path:
    """Write a tree as TOML with one ``[[nodes]]`` table per node."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        toml.dump({"config_hash": config_hash, **_plain(model.to_dict())}, f)
    return path


def read_tree(path: Union[str, Path]) -> TreeModel:
    data = _load_toml(Path(path))
    data.pop("config_hash", None)
    return TreeModel.from_dict(data)


@dataclass
class RunManifest:
    """What a run was made from and what it wrote."""
    scenario: str
    config_hash: str
    seed: int
    replicates: int
    versions: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    steps: List[str] = field(default_factory=list)


def write_manifest(manifest: RunManifest, directory: Union[str, Path]) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        toml.dump({"manifest": asdict(manifest)}, f)
    return path


def read_manifest(directory: Union[str, Path]) -> RunManifest:
    data = _load_toml(Path(directory) / MANIFEST_NAME)
    try:
        return RunManifest(**data["manifest"])
    except (KeyError, TypeError) as e:
        raise PersistenceError(f"Invalid manifest in {directory}: {e}", directory)


def _label_columns(record: PersonRecord) -> Tuple[Any, Any]:
    if record.label is None:
        return "", ""
    position = "" if record.label.position is None else record.label.position
    return int(record.label.in_scope), position


def pd_frame(pd_records: Sequence[PersonRecord], localities: Sequence[Locality]) -> pd.DataFrame:
    """One row per record: id, q, addresses, their localities and the label."""
    lookup = address_lookup(localities)
    rows = []
    for r in pd_records:
        in_scope, position = _label_columns(r)
        rows.append({
            "id": r.id,
            "q": r.q,
            "addresses": ";".join(str(a) for a in r.sol_addresses),
            "locality_ids": ";".join(str(lookup.get(a, -1)) for a in r.sol_addresses),
            "stratum": r.stratum,
            "family_id": r.family_id,
            "core": int(r.core),
            "sol_score": r.sol_score,
            "label_in_scope": in_scope,
            "label_position": position,
        })
    return pd.DataFrame(rows, columns=["id", "q", "addresses", "locality_ids", "stratum", "family_id", "core",
                                       "sol_score", "label_in_scope", "label_position"])


def world_frame(world: WorldTruth) -> pd.DataFrame:
    """One row per person of the world truth."""
    rows = []
    for p in world.persons:
        rows.append({
            "id": p.id,
            "in_scope": int(p.alive_in_scope),
            "address": "" if p.true_address is None else p.true_address,
            "locality_id": "" if p.true_address is None else world.locality_of(p.true_address),
            "stratum": p.stratum,
            "family_id": p.family_id,
            "attribute": p.attribute,
        })
    return pd.DataFrame(rows, columns=["id", "in_scope", "address", "locality_id", "stratum", "family_id",
                                       "attribute"])


def counters_frame(pd_records: Sequence[PersonRecord], counters: Sequence[FractionalCounter]) -> pd.DataFrame:
    """Counters CSV layout: id, mu_0 … mu_{q−1} (blank past q), xi, theta."""
    width = max((c.mu.size for c in counters), default=0)
    rows = []
    for r, c in zip(pd_records, counters):
        row: Dict[str, Any] = {"id": r.id}
        for j in range(width):
            row[f"mu_{j}"] = float(c.mu[j]) if j < c.mu.size else np.nan
        row["xi"] = c.xi
        row["theta"] = c.theta
        rows.append(row)
    return pd.DataFrame(rows, columns=["id"] + [f"mu_{j}" for j in range(width)] + ["xi", "theta"])


def counters_from_frame(frame: pd.DataFrame) -> Dict[int, FractionalCounter]:
    """Counters by record id from a counters table."""
    mu_columns = [c for c in frame.columns if c.startswith("mu_")]
    counters: Dict[int, FractionalCounter] = {}
    for row in frame.itertuples(index=False):
        values = row._asdict()
        mu = np.array([values[c] for c in mu_columns], dtype=float)
        counters[int(values["id"])] = FractionalCounter(mu[~np.isnan(mu)], values["xi"], values["theta"])
    return counters
