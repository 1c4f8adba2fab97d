"""Checkpoint directory: manifest.json + params.bin.

Parameter names are namespaced by component: "phi/" for the language
model, "theta/" for the prefix machinery, "ic/" for the relevance
classifier. Loading audits the partition, so a tensor under an unknown
namespace is an error rather than silently ignored. The phi/ subset can
be byte-compared across checkpoints to prove the LM was untouched by
later training stages.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..numeric import load_tensors, save_tensors, tensors_bytes
from .config import ModelConfig
from .transformer import Seq2SeqModel
from .vocab import Vocab

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
NAMESPACES = ("phi/", "theta/", "ic/")


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    directory,
    model: Seq2SeqModel,
    vocab: Vocab,
    stage: str,
    ontology_dict: dict | None = None,
    prefixer=None,
    ic=None,
    extra: dict | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors: dict[str, np.ndarray] = {}
    for name, t in model.parameters().items():
        tensors[f"phi/{name}"] = t.data
    manifest = {
        "format": "evex-checkpoint",
        "version": 1,
        "stage": stage,
        "model_config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "ontology": ontology_dict,
        "prefix_config": None,
        "ic_config": None,
        "extra": extra or {},
    }
    if prefixer is not None:
        manifest["prefix_config"] = prefixer.config.to_dict()
        for name, t in prefixer.parameters().items():
            tensors[f"theta/{name}"] = t.data
    if ic is not None:
        manifest["ic_config"] = ic.config.to_dict()
        for name, t in ic.parameters().items():
            tensors[f"ic/{name}"] = t.data
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    save_tensors(directory / PARAMS_NAME, tensors)


class Checkpoint:
    def __init__(self, model, vocab, stage, ontology_dict, prefixer, ic, extra):
        self.model = model
        self.vocab = vocab
        self.stage = stage
        self.ontology_dict = ontology_dict
        self.prefixer = prefixer
        self.ic = ic
        self.extra = extra


def _assign(component_params: dict, stored: dict[str, np.ndarray], namespace: str) -> None:
    expected = set(component_params)
    got = set(stored)
    if expected != got:
        missing = sorted(expected - got)
        surplus = sorted(got - expected)
        raise CheckpointError(
            f"{namespace} parameter set mismatch"
            + (f"; missing {missing[:5]}" if missing else "")
            + (f"; unexpected {surplus[:5]}" if surplus else "")
        )
    for name, t in component_params.items():
        arr = stored[name]
        if arr.shape != t.data.shape:
            raise CheckpointError(f"{namespace}{name}: shape {arr.shape} != {t.data.shape}")
        t.data = arr.copy()


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest.get("format") != "evex-checkpoint":
        raise CheckpointError(f"{directory}: not a checkpoint directory")
    tensors = load_tensors(directory / PARAMS_NAME)

    groups: dict[str, dict[str, np.ndarray]] = {ns: {} for ns in NAMESPACES}
    for name, arr in tensors.items():
        for ns in NAMESPACES:
            if name.startswith(ns):
                groups[ns][name[len(ns) :]] = arr
                break
        else:
            raise CheckpointError(f"tensor {name!r} is outside the known namespaces")

    config = ModelConfig.from_dict(manifest["model_config"])
    vocab = Vocab.from_dict(manifest["vocab"])
    model = Seq2SeqModel(config, seed=0)
    _assign(model.parameters(), groups["phi/"], "phi/")

    prefixer = None
    if manifest.get("prefix_config"):
        from ..prefix import DynamicPrefixer, PrefixConfig

        prefixer = DynamicPrefixer(PrefixConfig.from_dict(manifest["prefix_config"]), seed=0)
        _assign(prefixer.parameters(), groups["theta/"], "theta/")
    elif groups["theta/"]:
        raise CheckpointError("theta/ tensors present but manifest has no prefix_config")

    ic = None
    if manifest.get("ic_config"):
        from ..irrelevance import ICConfig, ICModel

        ic = ICModel(ICConfig.from_dict(manifest["ic_config"]), seed=0)
        _assign(ic.parameters(), groups["ic/"], "ic/")
    elif groups["ic/"]:
        raise CheckpointError("ic/ tensors present but manifest has no ic_config")

    return Checkpoint(
        model, vocab, manifest.get("stage", ""), manifest.get("ontology"), prefixer, ic,
        manifest.get("extra", {}),
    )


def phi_bytes(directory) -> bytes:
    """Canonical bytes of the LM parameter subset of a checkpoint."""
    tensors = load_tensors(Path(directory) / PARAMS_NAME)
    return tensors_bytes({k: v for k, v in tensors.items() if k.startswith("phi/")})
