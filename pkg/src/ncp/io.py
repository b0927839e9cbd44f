"""File formats: datasets, checkpoints, delimited tables.

All files are UTF-8 text.  Floats are written with 17 significant digits
(``%.17g``), which round-trips IEEE double exactly, so write-then-read is
lossless and a reloaded checkpoint reproduces bit-identical forward passes.

Dataset file layout (lines starting with ``#`` are ignored):

    {"alpha": ..., "sigma_mu": ..., "sigma_x": ..., "dim_x": ..., "n_min": ..., "n_max": ..., "n": N}
    <N rows of dim_x space-separated floats>
    labels 1 1 2 ...          (optional)
    means <K*dim_x floats>    (optional, row-major)

Checkpoint layout:

    NCP-CKPT-1
    {"specs": {...}, "train": {...} | null}
    array <name> <dim0> <dim1> ...
    <values, 8 per line>
    ...
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import ConfigError, FileFormatError
from .genmodel import Assignment, Dataset, GenConfig
from .model import NcpModel
from .nets import AdamState, MlpParams, MlpSpec
from .training import TrainState

TOOL_VERSION = "0.1.0"
CHECKPOINT_MAGIC = "NCP-CKPT-1"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def config_digest(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def provenance_line(config: dict, seed: int) -> str:
    return f"ncp {TOOL_VERSION} config={config_digest(config)} seed={seed}"


# ---------------------------------------------------------------------------
# Datasets


def write_dataset(path, data: Dataset, cfg: GenConfig, provenance: str | None = None) -> None:
    lines = []
    if provenance:
        lines.append(f"# {provenance}")
    header = dict(cfg.to_dict(), n=data.n)
    lines.append(json.dumps(header, sort_keys=True))
    for row in data.points:
        lines.append(" ".join(fmt(v) for v in row))
    if data.true_assignment is not None:
        lines.append("labels " + " ".join(str(v) for v in data.true_assignment.labels))
    if data.true_means is not None:
        lines.append("means " + " ".join(fmt(v) for v in data.true_means.ravel()))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_dataset(path) -> tuple[Dataset, GenConfig]:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FileFormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FileFormatError(f"{path}: bad header: {e}") from e
    cfg = GenConfig.from_dict(header)
    try:
        n = int(header["n"])
    except KeyError as e:
        raise FileFormatError(f"{path}: header is missing 'n'") from e
    if len(lines) < 1 + n:
        raise FileFormatError(f"{path}: expected {n} point rows, found {len(lines) - 1}")
    points = np.array(
        [[float(v) for v in lines[1 + i].split()] for i in range(n)], dtype=np.float64
    )
    if points.shape != (n, cfg.dim_x):
        raise FileFormatError(f"{path}: point rows have shape {points.shape}")
    assignment = None
    means = None
    for line in lines[1 + n :]:
        tag, _, rest = line.partition(" ")
        if tag == "labels":
            assignment = Assignment.from_labels([int(v) for v in rest.split()])
        elif tag == "means":
            vals = np.array([float(v) for v in rest.split()])
            means = vals.reshape(-1, cfg.dim_x)
        else:
            raise FileFormatError(f"{path}: unknown trailing row {tag!r}")
    return Dataset(points, true_assignment=assignment, true_means=means), cfg


# ---------------------------------------------------------------------------
# Checkpoints


def _param_items(name: str, params: MlpParams):
    for i, w in enumerate(params.weights):
        yield f"{name}.weight.{i}", w
    for i, b in enumerate(params.biases):
        yield f"{name}.bias.{i}", b
    for i, s in enumerate(params.slopes):
        yield f"{name}.slope.{i}", s


def _adam_items(name: str, state: AdamState):
    for i, m in enumerate(state.m):
        yield f"adam.{name}.m.{i}", m
    for i, v in enumerate(state.v):
        yield f"adam.{name}.v.{i}", v


def _write_array(out: list[str], name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    dims = " ".join(str(d) for d in arr.shape)
    out.append(f"array {name} {dims}".rstrip())
    flat = arr.ravel()
    for lo in range(0, flat.size, 8):
        out.append(" ".join(fmt(v) for v in flat[lo : lo + 8]))


def write_checkpoint(
    path,
    model: NcpModel,
    train_state: TrainState | None = None,
    provenance: str | None = None,
) -> None:
    header = {
        "specs": {
            "encoder": model.encoder_spec.to_dict(),
            "cluster": model.cluster_spec.to_dict(),
            "scorer": model.scorer_spec.to_dict(),
        },
        "train": None,
    }
    if train_state is not None:
        header["train"] = {
            "iteration": train_state.iteration,
            "adam_t": [train_state.encoder.t, train_state.cluster.t, train_state.scorer.t],
        }
    out = [CHECKPOINT_MAGIC]
    if provenance:
        out.append(f"# {provenance}")
    out.append(json.dumps(header, sort_keys=True))
    for part_name, params in zip(("encoder", "cluster", "scorer"), model.parts()):
        for name, arr in _param_items(part_name, params):
            _write_array(out, name, arr)
    if train_state is not None:
        for part_name, st in zip(
            ("encoder", "cluster", "scorer"),
            (train_state.encoder, train_state.cluster, train_state.scorer),
        ):
            for name, arr in _adam_items(part_name, st):
                _write_array(out, name, arr)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")


def _read_arrays(lines: list[str], start: int) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    i = start
    while i < len(lines):
        line = lines[i]
        if not line.startswith("array "):
            raise FileFormatError(f"expected an array block, found {line[:40]!r}")
        parts = line.split()
        name = parts[1]
        shape = tuple(int(v) for v in parts[2:])
        size = int(np.prod(shape)) if shape else 1
        vals: list[float] = []
        i += 1
        while len(vals) < size:
            vals.extend(float(v) for v in lines[i].split())
            i += 1
        arrays[name] = np.array(vals, dtype=np.float64).reshape(shape)
    return arrays


def _params_from_arrays(name: str, spec: MlpSpec, arrays: dict) -> MlpParams:
    n = spec.n_layers
    try:
        return MlpParams(
            weights=[arrays[f"{name}.weight.{i}"] for i in range(n)],
            biases=[arrays[f"{name}.bias.{i}"] for i in range(n)],
            slopes=[arrays[f"{name}.slope.{i}"] for i in range(n - 1)],
        )
    except KeyError as e:
        raise FileFormatError(f"checkpoint is missing array {e.args[0]!r}") from e


def read_checkpoint(path) -> tuple[NcpModel, TrainState | None]:
    with open(path, encoding="utf-8") as f:
        raw = [ln.rstrip("\n") for ln in f]
    lines = [ln for ln in raw if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    try:
        header = json.loads(lines[1])
    except (IndexError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path}: bad checkpoint header: {e}") from e
    specs = {k: MlpSpec.from_dict(v) for k, v in header["specs"].items()}
    arrays = _read_arrays(lines, 2)
    model = NcpModel(
        encoder_spec=specs["encoder"],
        cluster_spec=specs["cluster"],
        scorer_spec=specs["scorer"],
        encoder=_params_from_arrays("encoder", specs["encoder"], arrays),
        cluster=_params_from_arrays("cluster", specs["cluster"], arrays),
        scorer=_params_from_arrays("scorer", specs["scorer"], arrays),
    )
    train_state = None
    if header.get("train"):
        states = []
        for part_name, params in zip(("encoder", "cluster", "scorer"), model.parts()):
            n_arr = len(params.arrays())
            st = AdamState(
                m=[arrays[f"adam.{part_name}.m.{i}"] for i in range(n_arr)],
                v=[arrays[f"adam.{part_name}.v.{i}"] for i in range(n_arr)],
            )
            states.append(st)
        train_state = TrainState(*states, iteration=int(header["train"]["iteration"]))
        for st, t in zip(states, header["train"]["adam_t"]):
            st.t = int(t)
    return model, train_state


# ---------------------------------------------------------------------------
# Delimited tables


def write_table(path, columns: list[str], rows: list[list], provenance: str | None = None) -> None:
    """Tab-separated table; floats rendered at 17 significant digits."""
    lines = []
    if provenance:
        lines.append(f"# {provenance}")
    lines.append("\t".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise ConfigError(f"row has {len(row)} cells, expected {len(columns)}")
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt(v))
            else:
                cells.append(str(v))
        lines.append("\t".join(cells))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FileFormatError(f"{path}: empty table")
    columns = lines[0].split("\t")
    return columns, [ln.split("\t") for ln in lines[1:]]
