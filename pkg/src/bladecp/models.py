"""Station classifier architectures, training, and activation inspection.

Three architectures share one input contract, a (20, 20) blade matrix:

  nn2       flatten -> dense(fc, relu) -> dropout -> dense(k, softmax)
  cnn2_nn2  [conv5x5 relu -> pool] x2 -> same dense tail; spatial 20->10->5
  cnn4_nn2  [conv, conv, pool] x2    -> same dense tail; spatial 20->20->10->10->5

All conv layers in a model share the same kernel depth.  One classifier
is trained per axial station; its output width is that station's label
count.  Per-station seeds derive from the master seed and the station's
canonical index, so training order never changes the result.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import STATIONS, DatasetBank, LabelSpec, station_name
from .nn import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2x2,
    Model,
    NNError,
    Reshape,
    batch_cross_entropy,
    init_model,
    load_model,
    make_optimizer,
    save_model,
)

ARCH_KINDS = ("nn2", "cnn2_nn2", "cnn4_nn2")
MATRIX_SHAPE = (20, 20)


class TrainingError(RuntimeError):
    """Training failed; message names the station and epoch."""


@dataclass(frozen=True)
class ArchSpec:
    """Architecture selector plus the shape-determining sizes."""

    kind: str
    n_classes: int
    conv_depth: int = 16
    fc_hidden: int = 256
    keep_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise TrainingError(f"unknown architecture {self.kind!r}")
        if self.n_classes < 1:
            raise TrainingError(f"n_classes must be >= 1: {self.n_classes}")
        if self.conv_depth < 1:
            raise TrainingError(f"conv_depth must be >= 1: {self.conv_depth}")


@dataclass(frozen=True)
class Hyper:
    """Training hyperparameters; defaults reproduce the desk-scale runs."""

    optimizer: str = "momentum"
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 6


def build(arch: ArchSpec) -> Model:
    """Untrained model for the architecture; parameters are zero until
    init_model seeds them."""
    d, fc, k = arch.conv_depth, arch.fc_hidden, arch.n_classes
    tail = [
        Dense(fc, k, activation="softmax"),
    ]
    if arch.kind == "nn2":
        layers = [
            Flatten(),
            Dense(400, fc, activation="relu"),
            Dropout(arch.keep_prob),
        ] + tail
    elif arch.kind == "cnn2_nn2":
        layers = [
            Reshape((1, 20, 20)),
            Conv2D(1, d, padding="same", activation="relu"),
            MaxPool2x2(),
            Conv2D(d, d, padding="same", activation="relu"),
            MaxPool2x2(),
            Flatten(),
            Dense(d * 5 * 5, fc, activation="relu"),
            Dropout(arch.keep_prob),
        ] + tail
    else:  # cnn4_nn2
        layers = [
            Reshape((1, 20, 20)),
            Conv2D(1, d, padding="same", activation="relu"),
            Conv2D(d, d, padding="same", activation="relu"),
            MaxPool2x2(),
            Conv2D(d, d, padding="same", activation="relu"),
            Conv2D(d, d, padding="same", activation="relu"),
            MaxPool2x2(),
            Flatten(),
            Dense(d * 5 * 5, fc, activation="relu"),
            Dropout(arch.keep_prob),
        ] + tail
    return Model(layers, input_rank=2)


@dataclass
class StationModel:
    side: str
    cx: float
    arch: ArchSpec
    model: Model
    label_spec: LabelSpec
    # Per-cell train-split mean, subtracted from every input before the
    # forward pass.  Raw [0, 1] matrices condition the loss so badly
    # that training stalls at the majority class without it.
    input_offset: np.ndarray = field(
        default_factory=lambda: np.zeros(MATRIX_SHAPE)
    )
    curve: list[dict] = field(default_factory=list)

    @property
    def name(self) -> str:
        return station_name(self.side, self.cx)

    def centered(self, matrices: np.ndarray) -> np.ndarray:
        return np.asarray(matrices, dtype=np.float64) - self.input_offset

    def predict(self, matrix: np.ndarray) -> int:
        return predict(self.model, self.centered(matrix))

    def predict_batch(self, matrices: np.ndarray, batch_size: int = 512) -> np.ndarray:
        return predict_batch(self.model, self.centered(matrices), batch_size)


def predict(model: Model, matrix: np.ndarray) -> int:
    """Class with the highest output; exact ties go to the lowest index."""
    return int(np.argmax(model.forward(matrix, train=False)))


def predict_batch(model: Model, matrices: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = np.empty(matrices.shape[0], dtype=int)
    for lo in range(0, matrices.shape[0], batch_size):
        probs = model.forward(matrices[lo : lo + batch_size], train=False)
        out[lo : lo + probs.shape[0]] = probs.argmax(axis=1)
    return out


def _accuracy(model: Model, matrices: np.ndarray, labels: np.ndarray) -> float:
    return float((predict_batch(model, matrices) == labels).mean())


def station_seed(master_seed: int, side: str, cx: float) -> int:
    """Derived from the station's canonical index, not training order."""
    for k, (s, x) in enumerate(STATIONS):
        if s == side and abs(x - cx) < 1e-9:
            return int(np.random.SeedSequence([master_seed, k]).generate_state(1)[0])
    raise TrainingError(f"unknown station: {station_name(side, cx)}")


def train_station(
    bank: DatasetBank,
    side: str,
    cx: float,
    arch_kind: str,
    hyper: Hyper,
    seed: int,
    conv_depth: int = 16,
    fc_hidden: int = 256,
    keep_prob: float = 0.5,
) -> StationModel:
    """Train one station classifier on the train split, early-stopping on
    validation accuracy and retaining the best-validation snapshot."""
    k = bank.station_index(side, cx)
    spec = bank.label_specs[k]
    arch = ArchSpec(
        kind=arch_kind,
        n_classes=spec.n_labels,
        conv_depth=conv_depth,
        fc_hidden=fc_hidden,
        keep_prob=keep_prob,
    )
    labels = bank.labels_for(side, cx)
    train_idx = bank.split_ids("train")
    val_idx = bank.split_ids("validation")
    # Offset is quantized like the stored weights so a bank trained in
    # memory predicts identically after a save/load round trip.
    offset = (
        bank.matrices[train_idx]
        .mean(axis=0)
        .astype(np.float32)
        .astype(np.float64)
    )
    X = bank.matrices - offset

    root = np.random.SeedSequence(seed)
    init_rng, train_rng = (np.random.default_rng(s) for s in root.spawn(2))
    model = build(arch)
    init_model(model, init_rng)
    opt = make_optimizer(hyper.optimizer, hyper.lr, hyper.momentum)

    sm = StationModel(
        side=side,
        cx=cx,
        arch=arch,
        model=model,
        label_spec=spec,
        input_offset=offset,
    )
    best_val = -1.0
    best_snapshot = model.snapshot()
    stall = 0
    for epoch in range(hyper.max_epochs):
        order = train_rng.permutation(train_idx.size)
        losses = []
        hits = 0
        try:
            for lo in range(0, order.size, hyper.batch_size):
                idx = train_idx[order[lo : lo + hyper.batch_size]]
                probs = model.forward(X[idx], train=True, rng=train_rng)
                loss, dprobs = batch_cross_entropy(probs, labels[idx])
                if not math.isfinite(loss):
                    raise NNError(f"loss diverged to {loss}")
                model.backward(dprobs)
                opt.step(model.parameters(), model.gradients())
                losses.append(loss)
                hits += int((probs.argmax(axis=1) == labels[idx]).sum())
        except NNError as err:
            raise TrainingError(
                f"station {sm.name} epoch {epoch}: {err}"
            ) from None
        val_acc = _accuracy(model, X[val_idx], labels[val_idx])
        sm.curve.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "train_accuracy": hits / train_idx.size,
                "val_accuracy": val_acc,
            }
        )
        if val_acc > best_val:
            best_val = val_acc
            best_snapshot = model.snapshot()
            stall = 0
        else:
            stall += 1
            if stall > hyper.patience:
                break
    model.restore(best_snapshot)
    return sm


@dataclass
class ClassifierBank:
    arch_kind: str
    conv_depth: int
    fc_hidden: int
    keep_prob: float
    hyper: Hyper
    master_seed: int
    stations: dict[tuple[str, float], StationModel]

    def station(self, side: str, cx: float) -> StationModel:
        for (s, x), sm in self.stations.items():
            if s == side and abs(x - cx) < 1e-9:
                return sm
        raise TrainingError(f"no model for station {station_name(side, cx)}")


def train_bank(
    bank: DatasetBank,
    arch_kind: str,
    hyper: Hyper,
    master_seed: int,
    conv_depth: int = 16,
    fc_hidden: int = 256,
    keep_prob: float = 0.5,
    stations=STATIONS,
    progress=None,
) -> ClassifierBank:
    """18 independent station trainings; any processing order gives the
    same bank because seeds key off station identity."""
    out: dict[tuple[str, float], StationModel] = {}
    for side, cx in stations:
        sm = train_station(
            bank,
            side,
            cx,
            arch_kind,
            hyper,
            station_seed(master_seed, side, cx),
            conv_depth=conv_depth,
            fc_hidden=fc_hidden,
            keep_prob=keep_prob,
        )
        out[(side, cx)] = sm
        if progress is not None:
            progress(sm)
    return ClassifierBank(
        arch_kind=arch_kind,
        conv_depth=conv_depth,
        fc_hidden=fc_hidden,
        keep_prob=keep_prob,
        hyper=hyper,
        master_seed=master_seed,
        stations=out,
    )


# --- inspection ---

def conv_layer_indices(model: Model) -> list[int]:
    return [i for i, layer in enumerate(model.layers) if isinstance(layer, Conv2D)]


def inspect_activations(
    model: Model, matrix: np.ndarray, conv_ordinal: int
) -> tuple[np.ndarray, np.ndarray]:
    """Post-activation feature maps (d, H, W) of the chosen conv layer
    (by position among conv layers) plus its kernel tensor."""
    convs = conv_layer_indices(model)
    if not convs:
        raise TrainingError("model has no convolutional layers")
    if not 0 <= conv_ordinal < len(convs):
        raise TrainingError(
            f"conv layer {conv_ordinal} out of range [0, {len(convs)})"
        )
    stop = convs[conv_ordinal]
    x = np.asarray(matrix, dtype=np.float64)[None]
    for layer in model.layers[: stop + 1]:
        x = layer.forward(x, train=False)
    return x[0], model.layers[stop].K.copy()


def count_activated(maps: np.ndarray, fraction: float = 0.5) -> int:
    """Cells strictly above fraction * (max over all maps); 0 if the maps
    are identically zero."""
    if not 0.0 < fraction < 1.0:
        raise TrainingError(f"fraction out of (0, 1): {fraction}")
    peak = float(maps.max())
    return int(np.count_nonzero(maps > fraction * peak))


def majority_fraction(labels: np.ndarray) -> float:
    """Frequency of the most common label; the baseline any classifier
    must beat."""
    return float(np.bincount(labels).max() / labels.size)


# --- persistence ---

def save_bank(cbank: ClassifierBank, directory: str, dataset_hash: str = "") -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "arch": cbank.arch_kind,
        "conv_depth": cbank.conv_depth,
        "fc_hidden": cbank.fc_hidden,
        "keep_prob": cbank.keep_prob,
        "hyper": asdict(cbank.hyper),
        "master_seed": cbank.master_seed,
        "dataset_hash": dataset_hash,
        "stations": [],
        "curves": {},
    }
    for (side, cx), sm in sorted(cbank.stations.items()):
        name = station_name(side, cx)
        manifest["stations"].append(
            {
                "side": side,
                "cx": cx,
                "n_classes": sm.arch.n_classes,
                "cp_min": sm.label_spec.cp_min,
                "interval": sm.label_spec.interval,
            }
        )
        manifest["curves"][name] = sm.curve
        save_model(
            sm.model,
            os.path.join(directory, name),
            meta={
                "side": side,
                "cx": cx,
                "arch": sm.arch.kind,
                "n_classes": sm.arch.n_classes,
                "cp_min": sm.label_spec.cp_min,
                "interval": sm.label_spec.interval,
                "input_offset": [float(v) for v in sm.input_offset.ravel()],
            },
        )
    with open(os.path.join(directory, "bank.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def load_bank(directory: str) -> ClassifierBank:
    with open(os.path.join(directory, "bank.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    stations: dict[tuple[str, float], StationModel] = {}
    for entry in manifest["stations"]:
        side, cx = entry["side"], entry["cx"]
        name = station_name(side, cx)
        model, meta = load_model(os.path.join(directory, name))
        offset = np.array(
            meta.get("input_offset", np.zeros(MATRIX_SHAPE).ravel())
        ).reshape(MATRIX_SHAPE)
        spec = LabelSpec(
            side=side,
            cx=cx,
            cp_min=entry["cp_min"],
            interval=entry["interval"],
            n_labels=entry["n_classes"],
        )
        arch = ArchSpec(
            kind=manifest["arch"],
            n_classes=entry["n_classes"],
            conv_depth=manifest["conv_depth"],
            fc_hidden=manifest["fc_hidden"],
            keep_prob=manifest["keep_prob"],
        )
        stations[(side, cx)] = StationModel(
            side=side,
            cx=cx,
            arch=arch,
            model=model,
            label_spec=spec,
            input_offset=offset,
            curve=manifest["curves"].get(name, []),
        )
    return ClassifierBank(
        arch_kind=manifest["arch"],
        conv_depth=manifest["conv_depth"],
        fc_hidden=manifest["fc_hidden"],
        keep_prob=manifest["keep_prob"],
        hyper=Hyper(**manifest["hyper"]),
        master_seed=manifest["master_seed"],
        stations=stations,
    )
