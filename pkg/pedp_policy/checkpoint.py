"""
Single-file checkpoints for PEDP and the baselines.

A checkpoint is a zip archive holding ``meta.json`` (format version, model
kind, config, vocabulary digest, parameter shapes, payload digest, run digest)
and one row-major float32 ``.npy`` array per named parameter. Entry timestamps
are fixed so that identical parameters give identical bytes.
"""

import io
import json
import logging
import zipfile
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from pedp_policy.baselines import BASELINE_KINDS, BaselineConfig, build_baseline
from pedp_policy.digests import bytes_digest
from pedp_policy.model import PedpConfig, PedpModel

FORMAT_VERSION = 1
META_NAME = "meta.json"
PARAM_DIR = "params/"
FIXED_TIME = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    """Raised when a checkpoint is unreadable, inconsistent or built for another vocabulary."""
    pass


def _npy_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array, dtype="<f4"), allow_pickle=False)
    return buffer.getvalue()


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(model: nn.Module, path: Path, vocab_digest: str, run_digest: Optional[str] = None,
                    extra: Optional[Dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payloads = {name: _npy_bytes(tensor.detach().cpu().numpy())
                for name, tensor in sorted(model.state_dict().items())}
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "vocab_digest": vocab_digest,
        "parameters": {name: list(tensor.shape) for name, tensor in sorted(model.state_dict().items())},
        "payload_digest": bytes_digest(payloads[name] for name in sorted(payloads)),
        "run_digest": run_digest,
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w") as archive:
        _write_entry(archive, META_NAME, json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))
        for name in sorted(payloads):
            _write_entry(archive, PARAM_DIR + name + ".npy", payloads[name])
    logging.info(f"Saved {model.kind} checkpoint to {path}")
    return path


def build_model(kind: str, config: Dict) -> nn.Module:
    if kind == PedpModel.kind:
        return PedpModel(PedpConfig.from_dict(config))
    if kind in BASELINE_KINDS:
        return build_baseline(BaselineConfig.from_dict(config))
    raise CheckpointError(f'Unknown model kind "{kind}"')


def load_checkpoint(path: Path, expected_vocab_digest: Optional[str] = None) -> Tuple[nn.Module, Dict]:
    """
    Rebuild a model from a checkpoint, verifying format, payload digest, shapes
    and (when given) the vocabulary digest.

    :return: (model in eval mode, meta document)
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "r") as archive:
            meta = json.loads(archive.read(META_NAME).decode("utf-8"))
            payloads = {name: archive.read(PARAM_DIR + name + ".npy") for name in meta["parameters"]}
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as err:
        raise CheckpointError(f"Unreadable checkpoint {path}: {err}") from err

    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format {meta.get('format_version')} in {path}")
    if expected_vocab_digest is not None and meta["vocab_digest"] != expected_vocab_digest:
        raise CheckpointError(f"Checkpoint vocabulary digest {meta['vocab_digest'][:12]} does not match "
                              f"{expected_vocab_digest[:12]}")
    digest = bytes_digest(payloads[name] for name in sorted(payloads))
    if digest != meta["payload_digest"]:
        raise CheckpointError(f"Checkpoint payload digest mismatch in {path}")

    try:
        model = build_model(meta["kind"], meta["config"])
    except (TypeError, ValueError) as err:
        raise CheckpointError(f"Invalid model config in {path}: {err}") from err
    expected = {name: list(t.shape) for name, t in model.state_dict().items()}
    if expected != meta["parameters"]:
        raise CheckpointError(f"Parameter shapes in {path} do not match the stored config")

    state = {}
    for name, payload in payloads.items():
        array = np.load(io.BytesIO(payload), allow_pickle=False)
        if list(array.shape) != expected[name]:
            raise CheckpointError(f'Parameter "{name}" has shape {array.shape}, expected {expected[name]}')
        if not np.isfinite(array).all():
            raise CheckpointError(f'Parameter "{name}" contains non-finite values')
        state[name] = torch.from_numpy(array.copy())
    model.load_state_dict(state)
    model.eval()
    return model, meta
