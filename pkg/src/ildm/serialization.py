"""JSON artifacts: MDPs, policies, demo datasets, solve results, check reports.

Floats are written with Python's shortest round-trip repr, so load(save(x))
reproduces every double bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .demos import DemoDataset
from .mdp import LayeredMdp, MdpValidationError, TabularPolicy, validate_mdp

MDP_FIELDS = ("horizon", "layer_sizes", "num_actions", "initial", "transitions", "reward")


class ArtifactError(ValueError):
    """A file that is missing, unparsable, or fails validation; names the path."""


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def save_json(path, obj) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ArtifactError(f"{path}: no such file") from None
    except OSError as exc:
        raise ArtifactError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _require(data, key, source):
    if not isinstance(data, dict) or key not in data:
        raise ArtifactError(f"{source}: missing field {key!r}")
    return data[key]


def mdp_to_dict(mdp: LayeredMdp) -> dict:
    out = mdp.to_dict()
    out["metadata"] = dict(mdp.metadata)
    return out


def mdp_from_dict(data: dict, source: str = "<mdp>") -> LayeredMdp:
    values = {k: _require(data, k, source) for k in MDP_FIELDS}
    try:
        sizes = [int(s) for s in values["layer_sizes"]]
        if int(values["horizon"]) != len(sizes):
            raise ArtifactError(f"{source}: horizon {values['horizon']} but "
                                f"{len(sizes)} layer sizes")
        trans = [np.asarray(P, dtype=np.float64) for P in values["transitions"]]
        reward = [np.asarray(r, dtype=np.float64) for r in values["reward"]]
        mdp = LayeredMdp(tuple(sizes), int(values["num_actions"]),
                         np.asarray(values["initial"], dtype=np.float64), trans, reward,
                         metadata=dict(data.get("metadata") or {}))
        validate_mdp(mdp)
    except MdpValidationError as exc:
        where = f" at {exc.location}" if exc.location else ""
        raise ArtifactError(f"{source}: {exc}{where}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"{source}: {exc}") from None
    return mdp


def save_mdp(path, mdp: LayeredMdp) -> Path:
    return save_json(path, mdp_to_dict(mdp))


def load_mdp(path) -> LayeredMdp:
    return mdp_from_dict(load_json(path), str(path))


def policy_to_dict(pi: TabularPolicy) -> dict:
    return {"probs": [p.tolist() for p in pi.probs]}


def policy_from_dict(data: dict, mdp: LayeredMdp | None = None,
                     source: str = "<policy>") -> TabularPolicy:
    probs = _require(data, "probs", source)
    try:
        tables = [np.asarray(p, dtype=np.float64) for p in probs]
    except (TypeError, ValueError) as exc:
        raise ArtifactError(f"{source}: {exc}") from None
    for h, p in enumerate(tables):
        if p.ndim != 2:
            raise ArtifactError(f"{source}: probs[{h}] is not a table")
        if mdp is not None and p.shape != (mdp.layer_sizes[h], mdp.num_actions):
            raise ArtifactError(f"{source}: probs[{h}] has shape {p.shape}, expected "
                                f"{(mdp.layer_sizes[h], mdp.num_actions)}")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > 1e-12)
        if np.any(p < 0) or bad.size:
            raise ArtifactError(f"{source}: probs[{h}] rows must be distributions")
    if mdp is not None and len(tables) != mdp.horizon:
        raise ArtifactError(f"{source}: {len(tables)} layers, MDP has {mdp.horizon}")
    return TabularPolicy(tables)


def save_policy(path, pi: TabularPolicy) -> Path:
    return save_json(path, policy_to_dict(pi))


def load_policy(path, mdp: LayeredMdp | None = None) -> TabularPolicy:
    return policy_from_dict(load_json(path), mdp, str(path))


def save_demos(path, demo: DemoDataset) -> Path:
    return save_json(path, demo.to_dict())


def load_demos(path, mdp: LayeredMdp) -> DemoDataset:
    data = load_json(path)
    _require(data, "trajectories", str(path))
    stored = data.get("mdp_hash")
    if stored is not None and stored != mdp.content_hash():
        raise ArtifactError(f"{path}: mdp_hash {stored} does not match the MDP "
                            f"({mdp.content_hash()})")
    try:
        return DemoDataset.from_dict(data, mdp)
    except (TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: {exc}") from None
