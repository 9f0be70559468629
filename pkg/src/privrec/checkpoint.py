"""Versioned JSON checkpoints with named parameter groups.

Floats are serialized with Python's repr, which round-trips float64 exactly,
so load(save(params)) is value-exact.
"""

import json

import numpy as np

from .params import ParamSet

FORMAT_VERSION = 1


def save_checkpoint(path, groups, meta=None):
    """Write parameter groups to disk.

    `groups` maps a group name (e.g. "recall", "ranking") to a ParamSet.
    """
    payload = {
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "groups": {
            gname: {name: arr.tolist() for name, arr in pset.items()}
            for gname, pset in groups.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_checkpoint(path):
    """Read a checkpoint; returns (groups dict of ParamSet, meta dict)."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    groups = {
        gname: ParamSet({name: np.asarray(v, dtype=np.float64) for name, v in arrays.items()})
        for gname, arrays in payload["groups"].items()
    }
    return groups, payload.get("meta", {})
