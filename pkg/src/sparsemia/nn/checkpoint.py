"""Model checkpoints as ``.npz`` archives.

Layout (all arrays float64 unless noted):

* ``param:<name>`` / ``buffer:<name>`` -- parameter values and buffers;
* ``mask:<name>`` -- boolean keep-mask, present only for masked parameters;
* ``__meta__`` -- uint8 array holding UTF-8 JSON with keys ``arch``,
  ``butterfly`` (``null`` or ``{"segments", "factors"}``), ``epoch``,
  ``rng_state`` (a ``numpy`` bit-generator state or ``null``) and ``extra``.

No pickled objects are stored; loading rebuilds the architecture from
``arch`` and ``butterfly`` and copies the arrays back bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .models import Model, build_model

FORMAT_VERSION = 1


def save_checkpoint(path, model: Model, *, epoch: int = 0, rng_state: dict | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    arrays = model.state_dict()
    for name, p in model.named_parameters():
        if p.mask is not None:
            arrays[f"mask:{name}"] = p.mask.copy()
    meta = {
        "format": FORMAT_VERSION,
        "arch": model.arch,
        "butterfly": model.butterfly,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[Model, dict]:
    from ..butterfly import substitute_butterfly

    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint format {meta.get('format')}")
        model = build_model(meta["arch"])
        if meta["butterfly"]:
            bf = meta["butterfly"]
            substitute_butterfly(model, bf["segments"], bf["factors"], seed=0)
        state = {k: data[k] for k in data.files if k.startswith(("param:", "buffer:"))}
        model.load_state_dict(state)
        params = dict(model.named_parameters())
        for key in data.files:
            if key.startswith("mask:"):
                params[key[5:]].set_mask(data[key])
    return model, meta
