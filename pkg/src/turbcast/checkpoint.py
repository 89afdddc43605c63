"""Directory checkpoints: a JSON manifest plus one ``.npy`` file per tensor.

Parameter arrays are stored in a language-neutral layout: convolution
kernels as [kL, kW, kH, C_in, C_out] and per-cell peephole weights as
[L, W, H, C_hidden]; biases stay 1-D. File names follow the in-model
parameter names (``encoder.W_xi.npy``, ``head.weight.npy``). Optimizer
moments and RNG states are additional ``.npy`` files (torch-native layout)
so a resumed run continues bit-for-bit; nothing is pickled.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def _to_disk_layout(name: str, tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().numpy()
    if arr.ndim == 5:  # conv kernel [C_out, C_in, kL, kW, kH]
        return np.ascontiguousarray(arr.transpose(2, 3, 4, 1, 0))
    if arr.ndim == 4 and ".W_c" in f".{name}":  # peephole [C, L, W, H]
        return np.ascontiguousarray(arr.transpose(1, 2, 3, 0))
    return np.ascontiguousarray(arr)


def _from_disk_layout(name: str, arr: np.ndarray, target_ndim: int) -> np.ndarray:
    if target_ndim == 5 and arr.ndim == 5:
        return np.ascontiguousarray(arr.transpose(4, 3, 0, 1, 2))
    if target_ndim == 4 and arr.ndim == 4 and ".W_c" in f".{name}":
        return np.ascontiguousarray(arr.transpose(3, 0, 1, 2))
    return arr


def model_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    """Named parameter tensors of a model in disk layout."""
    return {name: _to_disk_layout(name, p) for name, p in model.named_parameters()}


def load_model_arrays(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    """Write disk-layout arrays back into a model's parameters in place."""
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise ValidationError(f"checkpoint is missing parameter arrays: {missing}")
    with torch.no_grad():
        for name, param in params.items():
            native = _from_disk_layout(name, arrays[name], param.ndim)
            if native.shape != tuple(param.shape):
                raise ValidationError(
                    f"checkpoint array {name} has shape {native.shape}, model expects {tuple(param.shape)}"
                )
            param.copy_(torch.from_numpy(np.ascontiguousarray(native)))


def optimizer_arrays(prefix: str, model: torch.nn.Module,
                     optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    """Adam/SGD moment tensors keyed by parameter name, torch-native layout."""
    out: dict[str, np.ndarray] = {}
    by_param = {id(p): name for name, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for param in group["params"]:
            state = optimizer.state.get(param)
            if not state:
                continue
            name = by_param.get(id(param))
            if name is None:
                raise ValidationError("optimizer holds a parameter not owned by the model")
            for key, value in state.items():
                if isinstance(value, torch.Tensor):
                    out[f"{prefix}.{name}.{key}"] = value.detach().cpu().numpy()
                else:
                    out[f"{prefix}.{name}.{key}"] = np.asarray(value)
    return out


def load_optimizer_arrays(prefix: str, model: torch.nn.Module,
                          optimizer: torch.optim.Optimizer,
                          arrays: dict[str, np.ndarray]) -> None:
    """Restore moment tensors saved by ``optimizer_arrays``; absent entries
    leave a parameter's state empty (fresh start for that tensor)."""
    keys_by_param: dict[str, dict[str, np.ndarray]] = {}
    lead = f"{prefix}."
    for full, arr in arrays.items():
        if not full.startswith(lead):
            continue
        body = full[len(lead):]
        pname, _, key = body.rpartition(".")
        keys_by_param.setdefault(pname, {})[key] = arr
    for name, param in model.named_parameters():
        saved = keys_by_param.get(name)
        if not saved:
            continue
        state: dict[str, object] = {}
        for key, arr in saved.items():
            tensor = torch.from_numpy(np.ascontiguousarray(arr))
            if key == "step":
                state[key] = tensor.reshape(()).clone()
            else:
                state[key] = tensor.view_as(param).clone() if tensor.numel() == param.numel() else tensor.clone()
        optimizer.state[param] = state


def generator_array(generator: torch.Generator) -> np.ndarray:
    return generator.get_state().numpy()


def load_generator_array(generator: torch.Generator, arr: np.ndarray) -> None:
    generator.set_state(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.uint8)))


def save_checkpoint(path: str | Path, manifest: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Write the manifest and every array under ``path`` (created fresh).

    The manifest gains ``format_version`` and a per-array shape/dtype index.
    """
    target = Path(path)
    target.mkdir(parents=True, exist_ok=True)
    index = {
        name: {"shape": list(arr.shape), "dtype": str(arr.dtype)} for name, arr in arrays.items()
    }
    body = dict(manifest)
    body["format_version"] = FORMAT_VERSION
    body["arrays"] = index
    for name, arr in arrays.items():
        np.save(target / f"{name}.npy", arr, allow_pickle=False)
    with open(target / MANIFEST_NAME, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return target


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint directory; verifies the manifest's array index."""
    target = Path(path)
    manifest_path = target / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ValidationError(f"no {MANIFEST_NAME} in {target}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format_version {manifest.get('format_version')!r}"
        )
    arrays: dict[str, np.ndarray] = {}
    for name, meta in manifest.get("arrays", {}).items():
        file = target / f"{name}.npy"
        if not file.is_file():
            raise ValidationError(f"manifest lists {name} but {file.name} is missing")
        arr = np.load(file, allow_pickle=False)
        if list(arr.shape) != meta["shape"] or str(arr.dtype) != meta["dtype"]:
            raise ValidationError(
                f"array {name} does not match its manifest entry "
                f"(shape {list(arr.shape)} vs {meta['shape']}, dtype {arr.dtype} vs {meta['dtype']})"
            )
        arrays[name] = arr
    return manifest, arrays
