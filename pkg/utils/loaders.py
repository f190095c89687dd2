import hashlib
import json
from pathlib import Path

import numpy as np

from lfis.model import PairwiseModel


def _to_builtin(obj):
    """json.dump default: numpy scalars and arrays to plain Python."""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps(obj, **kwargs) -> str:
    return json.dumps(obj, default=_to_builtin, **kwargs)


# ------------------------------------------------------------
# 1. Model files
# ------------------------------------------------------------

def model_to_dict(model: PairwiseModel) -> dict:
    """Model file document: M, q, coupling_scale, edges, domain plus provenance."""
    doc = {
        "M": model.num_variables,
        "q": model.q,
        "coupling_scale": model.coupling_scale,
        "domain": list(model.domain),
        "storage": model.storage,
        "builder": model.metadata.get("builder"),
        "seed": model.metadata.get("seed"),
        "dims": model.metadata.get("dims"),
    }
    extra = {k: v for k, v in model.metadata.items() if k not in ("builder", "seed", "dims")}
    if extra:
        doc["metadata"] = extra
    default_table = np.outer(model.domain_values, model.domain_values)
    if not np.array_equal(model.pair_table, default_table):
        doc["pair_table"] = model.pair_table.tolist()
    doc["edges"] = [[int(i), int(j), float(J)] for i, j, J in model.edges]
    return doc


def model_from_dict(doc: dict) -> PairwiseModel:
    missing = [k for k in ("M", "q", "coupling_scale", "edges", "domain") if k not in doc]
    if missing:
        raise ValueError(f"Model document is missing fields: {missing}")
    if len(doc["domain"]) != doc["q"]:
        raise ValueError(f"Domain has {len(doc['domain'])} values but q = {doc['q']}")
    metadata = {k: doc[k] for k in ("builder", "seed", "dims") if doc.get(k) is not None}
    metadata.update(doc.get("metadata", {}))
    return PairwiseModel(
        int(doc["M"]),
        np.asarray(doc["edges"], dtype=float).reshape(-1, 3),
        coupling_scale=float(doc["coupling_scale"]),
        domain=tuple(doc["domain"]),
        pair_table=doc.get("pair_table"),
        storage=doc.get("storage", "dense"),
        metadata=metadata,
    )


def save_model(model: PairwiseModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")
    return path


def load_model(path) -> PairwiseModel:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_dict(json.load(f))


def model_digest(model: PairwiseModel) -> str:
    """sha256 over the canonical model document."""
    payload = dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def state_digest(idx: np.ndarray) -> bytes:
    """128-bit content hash of a state given as domain positions."""
    return hashlib.blake2b(np.ascontiguousarray(idx, dtype=np.int16).tobytes(), digest_size=16).digest()


def order_digest(order) -> str:
    return hashlib.sha256(np.asarray(order, dtype=np.int64).tobytes()).hexdigest()[:16]


# ------------------------------------------------------------
# 2. Records
# ------------------------------------------------------------

def write_jsonl(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(dumps(rec, sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ------------------------------------------------------------
# 3. Trajectories
# ------------------------------------------------------------

def write_nfw_trajectory(traj, path) -> Path:
    """One JSON line per flip: {n, i, new_value, tau, energy}."""
    records = (
        {"n": n + 1, "i": int(i), "new_value": v, "tau": int(tau), "energy": float(e)}
        for n, (i, v, tau, e) in enumerate(zip(traj.sites, traj.values, traj.taus, traj.energies))
    )
    return write_jsonl(records, path)


def lfqgs_trajectory_to_dict(traj) -> dict:
    return {
        "x0": np.asarray(traj.x0).tolist(),
        "moves": [
            {"gamma": int(m.gamma), "flips": [[int(i), v] for i, v in m.flips]}
            for m in traj.moves
        ],
    }


def lfqgs_trajectory_from_dict(doc: dict):
    from lfis.lfqgs import LfMoveRecord, LfqgsTrajectory

    moves = [
        LfMoveRecord(gamma=int(m["gamma"]), flips=[(int(i), v) for i, v in m["flips"]])
        for m in doc["moves"]
    ]
    return LfqgsTrajectory(x0=np.asarray(doc["x0"]), moves=moves)


def save_lfqgs_trajectory(traj, path) -> Path:
    return write_json(lfqgs_trajectory_to_dict(traj), path)


def load_lfqgs_trajectory(path):
    return lfqgs_trajectory_from_dict(read_json(path))
