"""File formats: JSON rigs, CSV feature-point sequences and versioned model files.

All writers are deterministic.  Floats are written with 17 significant
digits, so reading a file back reproduces every value bit for bit and
writing the same data twice yields identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ParseError
from .kernel import GramMatrix, KernelSpec, KplsModel
from .retarget import CorrespondenceSet, FaceRig, FeaturePointFrame, Normalizer, RetargetModel

MODEL_FORMAT = "kpls-retarget-model"
MODEL_FORMAT_VERSION = 1


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None
    if not isinstance(data, dict):
        raise ParseError("top level must be a JSON object", str(path))
    return data


def _array(value, shape_tail: Tuple[int, ...], where: str, ndim: int) -> np.ndarray:
    try:
        A = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError("expected an array of numbers", where) from None
    if A.ndim != ndim or (shape_tail and A.shape[-len(shape_tail):] != shape_tail):
        raise ParseError(f"expected an array of shape (..., {', '.join(map(str, shape_tail))}), "
                         f"got {A.shape}", where)
    if not np.all(np.isfinite(A)):
        raise ParseError("non-finite value", where)
    return A


def _field(data: dict, key: str, where: str):
    if key not in data:
        raise ParseError(f"missing field {key!r}", where)
    return data[key]


# rigs

def rig_to_dict(rig: FaceRig) -> dict:
    return {
        "neutral_vertices": rig.neutral_vertices.tolist(),
        "blendshapes": [
            {"name": name, "deltas": rig.blendshape_deltas[k].tolist()}
            for k, name in enumerate(rig.blendshape_names)
        ],
        "feature_point_indices": [int(i) for i in rig.feature_point_indices],
    }


def save_rig(rig: FaceRig, path) -> None:
    _dump_json(rig_to_dict(rig), path)


def rig_from_dict(data: dict, source: str = "<rig>") -> FaceRig:
    neutral = _array(_field(data, "neutral_vertices", source), (3,), f"{source}: neutral_vertices", 2)
    shapes = _field(data, "blendshapes", source)
    if not isinstance(shapes, list):
        raise ParseError("blendshapes must be a list", f"{source}: blendshapes")
    names, deltas = [], []
    for k, entry in enumerate(shapes):
        where = f"{source}: blendshapes[{k}]"
        if not isinstance(entry, dict):
            raise ParseError("blendshape must be an object with name and deltas", where)
        name = _field(entry, "name", where)
        if not isinstance(name, str):
            raise ParseError("blendshape name must be a string", where)
        D = _array(_field(entry, "deltas", where), (3,), f"{where}.deltas", 2)
        if D.shape[0] != neutral.shape[0]:
            raise ParseError(f"{D.shape[0]} deltas for {neutral.shape[0]} vertices", f"{where}.deltas")
        names.append(name)
        deltas.append(D)
    indices = _field(data, "feature_point_indices", source)
    if not isinstance(indices, list) or not all(isinstance(i, int) and not isinstance(i, bool)
                                                for i in indices):
        raise ParseError("feature_point_indices must be a list of integers",
                         f"{source}: feature_point_indices")
    stack = np.stack(deltas) if deltas else np.zeros((0, neutral.shape[0], 3))
    try:
        return FaceRig(neutral, tuple(names), stack, np.asarray(indices, dtype=np.int64))
    except ValueError as exc:
        raise ParseError(str(exc), source) from None


def load_rig(path) -> FaceRig:
    return rig_from_dict(_load_json(path), str(path))


# feature-point sequences

def sequence_header(n_points: int, neutral_column: bool = False) -> List[str]:
    cols = ["frame"] + [f"p{i}{axis}" for i in range(n_points) for axis in "xyz"]
    return cols + ["neutral"] if neutral_column else cols


def write_sequence(path, frames: Sequence[FeaturePointFrame], n_points: Optional[int] = None,
                   neutral_index: Optional[int] = None) -> None:
    """Write frames as CSV; ``neutral_index`` adds a 0/1 ``neutral`` column.

    ``n_points`` fixes the header of an empty sequence.
    """
    frames = list(frames)
    if frames:
        n_points = frames[0].n_points
    if n_points is None:
        raise DimensionMismatch("the point count of an empty sequence must be given")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(sequence_header(n_points, neutral_index is not None))
        for i, frame in enumerate(frames):
            if frame.n_points != n_points:
                raise DimensionMismatch(f"frame {i} has {frame.n_points} points, expected {n_points}")
            row = [str(frame.time_index)] + [format_float(v) for v in frame.points.ravel()]
            if neutral_index is not None:
                row.append("1" if i == neutral_index else "0")
            writer.writerow(row)


def read_sequence(path) -> Tuple[List[FeaturePointFrame], Optional[int], int]:
    """Parse a sequence CSV.

    Returns ``(frames, neutral_row, n_points)``; ``neutral_row`` is the
    position of the row flagged in an optional ``neutral`` column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", f"{path}:1") from None
        header = [h.strip() for h in header]
        has_neutral = bool(header) and header[-1] == "neutral"
        coords = header[1:-1] if has_neutral else header[1:]
        if not header or header[0] != "frame" or len(coords) % 3 or not coords:
            raise ParseError("header must be 'frame,p0x,p0y,p0z,...'", f"{path}:1")
        n_points = len(coords) // 3
        if coords != sequence_header(n_points)[1:]:
            raise ParseError("coordinate columns must read p0x,p0y,p0z,p1x,... in order", f"{path}:1")
        frames, neutral_rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            where = f"{path}:{line_no}"
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", where)
            try:
                index = int(row[0])
            except ValueError:
                raise ParseError(f"frame index {row[0]!r} is not an integer", where) from None
            if index < 0:
                raise ParseError("frame index must be non-negative", where)
            try:
                values = [float(v) for v in row[1:1 + 3 * n_points]]
            except ValueError as exc:
                raise ParseError(f"bad coordinate: {exc}", where) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite coordinate", where)
            if has_neutral:
                flag = row[-1].strip()
                if flag not in ("0", "1"):
                    raise ParseError(f"neutral flag must be 0 or 1, got {flag!r}", where)
                if flag == "1":
                    neutral_rows.append(len(frames))
            frames.append(FeaturePointFrame(np.array(values).reshape(n_points, 3), index))
    if len(neutral_rows) > 1:
        raise ParseError(f"{len(neutral_rows)} rows are flagged neutral, expected one", str(path))
    if has_neutral and frames and not neutral_rows:
        raise ParseError("a neutral column is present but no row is flagged", str(path))
    return frames, (neutral_rows[0] if neutral_rows else None), n_points


def write_correspondence(corr: CorrespondenceSet, source_path, target_path) -> None:
    write_sequence(source_path, corr.source_frames, neutral_index=corr.neutral_index)
    write_sequence(target_path, corr.target_frames, neutral_index=corr.neutral_index)


def read_correspondence(source_path, target_path) -> CorrespondenceSet:
    """Pair two sequence files row by row; the first pair is neutral unless flagged."""
    src, src_neutral, _ = read_sequence(source_path)
    tgt, tgt_neutral, _ = read_sequence(target_path)
    if len(src) != len(tgt):
        raise ParseError(f"{len(src)} source frames but {len(tgt)} target frames", str(target_path))
    if src_neutral is not None and tgt_neutral is not None and src_neutral != tgt_neutral:
        raise ParseError(f"neutral flagged at pair {src_neutral} in the source file "
                         f"but at pair {tgt_neutral} in the target file", str(target_path))
    neutral = src_neutral if src_neutral is not None else (tgt_neutral or 0)
    return CorrespondenceSet(tuple(src), tuple(tgt), neutral_index=neutral)


# models

def _normalizer_to_dict(norm: Normalizer) -> dict:
    return {
        "policy": norm.policy,
        "reference_centroid": norm.reference_centroid.tolist(),
        "reference_scale": float(norm.reference_scale),
        "reference_points": None if norm.reference_points is None else norm.reference_points.tolist(),
    }


def _normalizer_from_dict(data: dict, where: str) -> Normalizer:
    ref = data.get("reference_points")
    try:
        return Normalizer(
            reference_centroid=_array(_field(data, "reference_centroid", where), (3,),
                                      f"{where}.reference_centroid", 1),
            reference_scale=float(_field(data, "reference_scale", where)),
            policy=_field(data, "policy", where),
            reference_points=None if ref is None else _array(ref, (3,), f"{where}.reference_points", 2),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), where) from None


def model_to_dict(model: RetargetModel, metadata: Optional[dict] = None) -> dict:
    reg = model.regressor
    if not isinstance(reg, KplsModel):
        raise TypeError("only kernel PLS retargeters can be saved")
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "n_source_points": model.n_source_points,
        "n_target_points": model.n_target_points,
        "source_normalizer": _normalizer_to_dict(model.source_normalizer),
        "target_normalizer": _normalizer_to_dict(model.target_normalizer),
        "kernel": reg.spec.to_dict(),
        "n_components": reg.n_components,
        "training_inputs": reg.training_inputs.tolist(),
        "T0": reg.T0.tolist(),
        "G": reg.G.tolist(),
        "U": reg.U.tolist(),
        "C": reg.C.tolist(),
        "gram": {
            "values": reg.K0.values.tolist(),
            "row_means": reg.K0.row_means.tolist(),
            "grand_mean": float(reg.K0.grand_mean),
        },
        "y_mean": reg.y_mean.tolist(),
        "metadata": metadata or {},
    }


def model_from_dict(data: dict, source: str = "<model>") -> RetargetModel:
    if data.get("format") != MODEL_FORMAT:
        raise ParseError(f"not a {MODEL_FORMAT} file", source)
    version = data.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format version {version!r} "
                         f"(this build reads version {MODEL_FORMAT_VERSION})", source)
    where = lambda key: f"{source}: {key}"  # noqa: E731
    try:
        spec = KernelSpec.from_dict(_field(data, "kernel", source))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), where("kernel")) from None
    X = _array(_field(data, "training_inputs", source), (), where("training_inputs"), 2)
    n = X.shape[0]
    T0 = _array(_field(data, "T0", source), (), where("T0"), 2)
    G = _array(_field(data, "G", source), (), where("G"), 2)
    U = _array(_field(data, "U", source), (), where("U"), 2)
    C = _array(_field(data, "C", source), (), where("C"), 2)
    gram_data = _field(data, "gram", source)
    K = _array(_field(gram_data, "values", where("gram")), (n,), where("gram.values"), 2)
    row_means = _array(_field(gram_data, "row_means", where("gram")), (n,), where("gram.row_means"), 1)
    y_mean = _array(_field(data, "y_mean", source), (T0.shape[1],), where("y_mean"), 1)
    for name, A in (("T0", T0), ("G", G), ("U", U)):
        if A.shape[0] != n:
            raise ParseError(f"{name} has {A.shape[0]} rows, expected {n}", where(name))
    if G.shape != U.shape or C.shape[1] != G.shape[1]:
        raise ParseError("score and weight matrices disagree on the component count", source)
    regressor = KplsModel(
        spec=spec, training_inputs=X, T0=T0, G=G, U=U, C=C,
        K0=GramMatrix(K, row_means, float(_field(gram_data, "grand_mean", where("gram")))),
        y_mean=y_mean,
    )
    try:
        return RetargetModel(
            _normalizer_from_dict(_field(data, "source_normalizer", source), where("source_normalizer")),
            _normalizer_from_dict(_field(data, "target_normalizer", source), where("target_normalizer")),
            regressor,
            int(_field(data, "n_source_points", source)),
            int(_field(data, "n_target_points", source)),
        )
    except DimensionMismatch as exc:
        raise ParseError(str(exc), source) from None


def save_model(model: RetargetModel, path, metadata: Optional[dict] = None) -> None:
    _dump_json(model_to_dict(model, metadata), path)


def load_model(path) -> RetargetModel:
    return model_from_dict(_load_json(path), str(path))


def read_model_metadata(path) -> dict:
    """Header fields of a model file without rebuilding the model."""
    data = _load_json(path)
    model = model_from_dict(data, str(path))
    return {
        "format_version": data["format_version"],
        "kernel": data["kernel"],
        "n_components": model.regressor.n_components,
        "n_pairs": model.regressor.training_inputs.shape[0],
        "n_source_points": model.n_source_points,
        "n_target_points": model.n_target_points,
        "input_dim": model.regressor.input_dim,
        "output_dim": model.regressor.output_dim,
        "source_policy": model.source_normalizer.policy,
        "target_policy": model.target_normalizer.policy,
        "metadata": data.get("metadata", {}),
    }


def write_json(obj, path) -> None:
    _dump_json(obj, path)

