"""File formats: network JSON, weight sidecars, cost model, run manifests.

Every emitted JSON is canonical (sorted keys, two-space indent, trailing
newline) so identical runs produce byte-identical files. Schemas carry a
schema_version; unknown major versions are refused. Validation errors name
the JSON path that failed.
"""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .branch import ReBranchConfig, atl_split, build_rebranch, spwd_decorate
from .errors import ValidationError
from .graph import LayerSpec, NetworkGraph
from .macro import MacroConfig
from .quant import QuantTensor
from .system import CostModel
from .training import Dataset

SCHEMA_VERSION = "1.0"

LAYER_FIELDS = ("kind", "in_ch", "out_ch", "kernel", "stride", "pad",
                "weight_bits", "act_bits", "placement", "trainable",
                "out_scale", "inputs", "name")


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}")
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON ({err})")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def check_schema(doc: dict, path: str):
    version = doc.get("schema_version")
    if version is None:
        raise ValidationError(f"{path}.schema_version: missing")
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise ValidationError(
            f"{path}.schema_version: unsupported major version {version!r}")


def _field(doc, key, path, kind=None, default=KeyError):
    if key not in doc:
        if default is KeyError:
            raise ValidationError(f"{path}.{key}: missing required field")
        return default
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ValidationError(
            f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(val).__name__}")
    return val


# ------------------------------------------------------------------ network


def graph_to_dict(net: NetworkGraph, name: str = "", transforms=None) -> dict:
    layers = []
    for spec in net.layers:
        entry = {f: getattr(spec, f) for f in LAYER_FIELDS}
        entry["inputs"] = list(spec.inputs)
        layers.append(entry)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "input_shape": list(net.input_shape),
        "layers": layers,
    }
    if transforms:
        doc["transforms"] = transforms
    return doc


def graph_from_dict(doc: dict, path: str = "network") -> tuple:
    """Parse a network document; returns (net, name, transforms)."""
    check_schema(doc, path)
    shape = _field(doc, "input_shape", path, list)
    raw_layers = _field(doc, "layers", path, list)
    specs = []
    for i, entry in enumerate(raw_layers):
        lp = f"{path}.layers[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{lp}: expected an object")
        kind = _field(entry, "kind", lp, str)
        kw = {}
        for f in LAYER_FIELDS[1:]:
            if f in entry:
                kw[f] = entry[f]
        if "inputs" in kw and kw["inputs"] is not None:
            kw["inputs"] = tuple(kw["inputs"])
        try:
            specs.append(LayerSpec(kind, **kw))
        except (ValidationError, TypeError) as err:
            raise ValidationError(f"{lp}: {err}")
    try:
        net = NetworkGraph(specs, tuple(shape)).validate()
    except ValidationError as err:
        raise ValidationError(f"{path}.layers: {err}")
    return net, doc.get("name", ""), doc.get("transforms", [])


def apply_transforms(net: NetworkGraph, weights: dict, transforms: list,
                     path: str = "network.transforms", seed: int = 0):
    """Apply the declared transforms[] list in order."""
    reports = []
    for i, t in enumerate(transforms):
        tp = f"{path}[{i}]"
        kind = _field(t, "type", tp, str)
        params = _field(t, "params", tp, dict, default={})
        if kind == "rebranch":
            group = _field(params, "group", tp, list)
            cfg = ReBranchConfig(
                compress_ratio=int(params.get("compress", 4)),
                decompress_ratio=int(params.get("decompress", 4)),
                trunk_group=(int(group[0]), int(group[1])))
            net, weights, info = build_rebranch(
                net, weights, cfg, seed=int(params.get("seed", seed)))
            reports.append({"type": kind, "res_params": info.res_params,
                            "trunk_params": info.trunk_params})
        elif kind == "atl":
            net = atl_split(net, int(_field(params, "k", tp)))
            reports.append({"type": kind, "k": int(params["k"])})
        elif kind == "spwd":
            net, weights, info = spwd_decorate(
                net, weights, int(_field(params, "layer", tp)),
                sram_bits=int(params.get("sram_bits", 2)))
            reports.append({"type": kind,
                            "area_saving_bound": info["area_saving_bound"]})
        else:
            raise ValidationError(f"{tp}.type: unknown transform {kind!r}")
    return net, weights, reports


def load_network(path, seed: int = 0):
    """Load a network file and apply its transforms; returns (net, weights,
    name). Weights start empty unless a transform creates some."""
    doc = read_json(path)
    net, name, transforms = graph_from_dict(doc, str(path))
    net, weights, _ = apply_transforms(net, {}, transforms, seed=seed)
    return net, weights, name


# ------------------------------------------------------------------ weights


def save_weights_npz(path, weights: dict):
    arrays = {}
    for i, qt in weights.items():
        arrays[f"data_{i}"] = qt.data
        arrays[f"meta_{i}"] = np.array([qt.bits, int(qt.signed), qt.scale],
                                       dtype=np.float64)
    np.savez(path, **arrays)


def load_weights_npz(path) -> dict:
    try:
        blob = np.load(path)
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}")
    out = {}
    for key in blob.files:
        if not key.startswith("data_"):
            continue
        i = int(key[len("data_"):])
        bits, signed, scale = blob[f"meta_{i}"]
        out[i] = QuantTensor(blob[key], bits=int(bits), signed=bool(signed),
                             scale=float(scale))
    return out


def weights_to_dict(weights: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "layers": {
            str(i): {
                "bits": qt.bits,
                "signed": qt.signed,
                "scale": qt.scale,
                "shape": list(qt.shape),
                "data": qt.data.reshape(-1).tolist(),
            }
            for i, qt in weights.items()
        },
    }


def weights_from_dict(doc: dict, path: str = "weights") -> dict:
    check_schema(doc, path)
    layers = _field(doc, "layers", path, dict)
    out = {}
    for key, entry in layers.items():
        lp = f"{path}.layers.{key}"
        data = np.array(_field(entry, "data", lp, list), dtype=np.int64)
        shape = tuple(_field(entry, "shape", lp, list))
        try:
            out[int(key)] = QuantTensor(
                data.reshape(shape), bits=int(_field(entry, "bits", lp)),
                signed=bool(_field(entry, "signed", lp)),
                scale=float(_field(entry, "scale", lp)))
        except ValidationError as err:
            raise ValidationError(f"{lp}: {err}")
    return out


def load_weights(path) -> dict:
    path = str(path)
    if path.endswith(".npz"):
        return load_weights_npz(path)
    return weights_from_dict(read_json(path), path)


# --------------------------------------------------------------- cost model


def costmodel_to_dict(cost: CostModel) -> dict:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(asdict(cost))
    return doc


def costmodel_from_dict(doc: dict, path: str = "costmodel") -> CostModel:
    check_schema(doc, path)
    kw = {k: v for k, v in doc.items() if k != "schema_version"}
    try:
        return CostModel(**kw)
    except (ValidationError, TypeError) as err:
        raise ValidationError(f"{path}: {err}")


def load_costmodel(path) -> CostModel:
    return costmodel_from_dict(read_json(path), str(path))


def macro_from_dict(doc: dict, path: str = "macro") -> MacroConfig:
    kw = {k: v for k, v in doc.items() if k != "schema_version"}
    try:
        return MacroConfig(**kw)
    except (ValidationError, TypeError) as err:
        raise ValidationError(f"{path}: {err}")


# ------------------------------------------------------------------ dataset


def load_dataset(path) -> Dataset:
    """Load samples from a .npz blob or a directory of JSON sample files."""
    p = Path(path)
    if p.is_dir():
        xs, ys = [], []
        for f in sorted(p.glob("*.json")):
            doc = read_json(f)
            xs.append(np.array(_field(doc, "image", str(f), list),
                               dtype=np.float64))
            ys.append(int(_field(doc, "label", str(f))))
        if not xs:
            raise ValidationError(f"{path}: no .json samples found")
        return Dataset(np.stack(xs), np.array(ys))
    if str(p).endswith(".npz"):
        try:
            blob = np.load(p)
        except FileNotFoundError:
            raise ValidationError(f"no such file: {path}")
        if "images" not in blob.files or "labels" not in blob.files:
            raise ValidationError(f"{path}: needs 'images' and 'labels' arrays")
        return Dataset(blob["images"], blob["labels"])
    raise ValidationError(f"{path}: expected a directory or a .npz file")


def save_dataset(path, ds: Dataset):
    np.savez(path, images=ds.x.astype(np.float32), labels=ds.y)


# ----------------------------------------------------------------- manifest


def build_manifest(command: str, args: dict, input_files: list,
                   seed: int, out_dir: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "input_hashes": {str(p): sha256_file(p) for p in input_files},
        "seed": seed,
        "out_dir": str(out_dir),
        "tool_version": __version__,
    }
