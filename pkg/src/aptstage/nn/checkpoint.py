"""Versioned checkpoint container with bit-exact parameter round-trip."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CompatibilityError
from .params import ParamStore

FORMAT_VERSION = 1


def save_checkpoint(path, store: ParamStore, metadata: dict) -> None:
    """Write all (name, shape, values) triples plus metadata to an .npz file.
    Binary float storage keeps the round-trip bit-exact."""
    meta = dict(metadata)
    meta["format_version"] = FORMAT_VERSION
    meta["rng_seed"] = store.seed
    meta["param_names"] = store.names()
    arrays = {f"param/{name}": store.tensor(name).data for name in store.names()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CompatibilityError(
                f"unsupported checkpoint format version: {meta.get('format_version')}"
            )
        store = ParamStore(seed=meta.get("rng_seed", 0))
        for name in meta["param_names"]:
            store.add(name, npz[f"param/{name}"])
    return store, meta
