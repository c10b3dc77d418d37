"""Dataset CSV and model JSON formats."""
import csv
import json
import re

import numpy as np

from .bags import Bag, MilDataset
from .errors import InputError, VgpmilError
from .kernels import KernelConfig
from .vi import FitDiagnostics, TrainedModel

__all__ = ["load_dataset", "save_dataset", "save_model", "load_model", "MODEL_FORMAT_VERSION"]

MODEL_FORMAT = "vgpmil-model"
MODEL_FORMAT_VERSION = 1
_FIXED = ("bag_id", "instance_id", "row", "col", "bag_label", "instance_label")
_FEATURE = re.compile(r"^f(\d+)$")


def _err(msg):
    return InputError(msg, component="data-cli")


def _parse_label(text, lineno, what):
    if text not in ("0", "1"):
        raise _err(f"line {lineno}: {what} must be 0 or 1, got {text!r}")
    return int(text)


def load_dataset(path):
    """Read a dataset CSV. Bags are returned sorted by bag id; instances keep
    file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _err(f"{path}: empty file (header row is mandatory)") from None
        header = [h.strip() for h in header]
        missing = [c for c in _FIXED if c not in header]
        if missing:
            raise _err(f"line 1: missing columns {missing}")
        feats = sorted((int(m.group(1)), i) for i, h in enumerate(header)
                       if (m := _FEATURE.match(h)))
        if not feats or [k for k, _ in feats] != list(range(len(feats))):
            raise _err("line 1: feature columns must be f0..f{D-1}")
        feat_idx = [i for _, i in feats]
        col = {name: header.index(name) for name in _FIXED}

        groups = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != len(header):
                raise _err(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            rec = [x.strip() for x in rec]
            bag_id = rec[col["bag_id"]]
            if not bag_id:
                raise _err(f"line {lineno}: empty bag_id")
            try:
                x = [float(rec[i]) for i in feat_idx]
            except ValueError as exc:
                raise _err(f"line {lineno}: bad feature value ({exc})") from None
            r, c = rec[col["row"]], rec[col["col"]]
            if (r == "") != (c == ""):
                raise _err(f"line {lineno}: row and col must both be given or both empty")
            try:
                rc = None if r == "" else (int(r), int(c))
            except ValueError:
                raise _err(f"line {lineno}: row/col must be integers") from None
            il = rec[col["instance_label"]]
            g = groups.setdefault(bag_id, {"label": None, "rows": []})
            label = _parse_label(rec[col["bag_label"]], lineno, "bag_label")
            if g["label"] is None:
                g["label"] = label
            elif g["label"] != label:
                raise _err(f"line {lineno}: bag {bag_id!r} has conflicting bag labels")
            g["rows"].append((rec[col["instance_id"]], rc,
                              None if il == "" else _parse_label(il, lineno, "instance_label"), x))

    if not groups:
        raise _err(f"{path}: no bags")
    bags = []
    for bag_id in sorted(groups):
        g = groups[bag_id]
        rows = g["rows"]
        coords = [rc for _, rc, _, _ in rows]
        ilabels = [h for _, _, h, _ in rows]
        if any(rc is None for rc in coords) and not all(rc is None for rc in coords):
            raise _err(f"bag {bag_id!r}: grid coordinates given for only some instances")
        if any(h is None for h in ilabels) and not all(h is None for h in ilabels):
            raise _err(f"bag {bag_id!r}: instance labels given for only some instances")
        try:
            bags.append(Bag(
                bag_id=bag_id,
                label=g["label"],
                X=np.array([x for *_, x in rows]),
                coords=None if coords[0] is None else np.array(coords),
                instance_labels=None if ilabels[0] is None else np.array(ilabels),
                instance_ids=[iid for iid, *_ in rows],
            ))
        except VgpmilError as exc:
            raise _err(f"bag {bag_id!r}: {exc.args[0]}") from None
    try:
        return MilDataset(bags)
    except VgpmilError as exc:
        raise _err(exc.args[0]) from None


def save_dataset(dataset, path):
    D = dataset.feature_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_FIXED) + [f"f{k}" for k in range(D)])
        for bag in dataset.bags:
            for i in range(len(bag)):
                r, c = ("", "") if bag.coords is None else (int(bag.coords[i, 0]), int(bag.coords[i, 1]))
                il = "" if bag.instance_labels is None else int(bag.instance_labels[i])
                w.writerow([bag.bag_id, bag.instance_ids[i], r, c, bag.label, il]
                           + [repr(float(v)) for v in bag.X[i]])


def _model_dict(model):
    diag = model.diagnostics
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "kernel": {
            "variance": model.kernel.variance,
            "lengthscale": model.kernel.lengthscale,
            "jitter": model.kernel.jitter,
        },
        "lambda": model.lam,
        "neighborhood": model.neighborhood,
        "seed": model.seed,
        "jitter_used": model.jitter,
        "n_inducing": model.n_inducing,
        "inducing_locations": model.Z.tolist(),
        "mu_u": model.mu_u.tolist(),
        "Sigma_u": model.Sigma_u.tolist(),
        "diagnostics": None if diag is None else {
            "mean_change": diag.mean_change.tolist(),
            "expectation_change": diag.expectation_change.tolist(),
            "flagged_bags": list(diag.flagged_bags),
        },
    }


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_model_dict(model), fh)
        fh.write("\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _err(f"cannot read model file {path}: {exc}") from None
    if raw.get("format") != MODEL_FORMAT or raw.get("version") != MODEL_FORMAT_VERSION:
        raise _err(f"{path}: unsupported model format {raw.get('format')!r} "
                   f"version {raw.get('version')!r}")
    try:
        diag = raw.get("diagnostics")
        return TrainedModel(
            kernel=KernelConfig(**raw["kernel"]),
            lam=raw["lambda"],
            Z=np.array(raw["inducing_locations"], dtype=np.float64),
            mu_u=np.array(raw["mu_u"], dtype=np.float64),
            Sigma_u=np.array(raw["Sigma_u"], dtype=np.float64),
            jitter=raw["jitter_used"],
            seed=raw["seed"],
            neighborhood=raw["neighborhood"],
            diagnostics=None if diag is None else FitDiagnostics(
                np.array(diag["mean_change"]), np.array(diag["expectation_change"]),
                list(diag["flagged_bags"])),
        )
    except (KeyError, TypeError) as exc:
        raise _err(f"{path}: malformed model file ({exc})") from None
