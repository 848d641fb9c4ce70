"""Pre-training loop with the progressive curriculum, checkpoints, linear probe.

Each optimizer step samples a batch of 3-image training inputs, plans masks
per the configured strategy, accumulates gradients over the batch, and takes
one AdamW step at the cosine-schedule rate. Phase 1 draws only from S2-L8
sets, phase 2 only from GF-S2 sets (hard switch). The loss log records, per
step, the phase, learning rate, batch loss, and the mean-predictor baseline
(variance of the masked targets), plus the batch's set kinds for curriculum
auditing; the CSV export keeps the pinned (step, phase, lr, loss) columns.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .config import Phase, TrainConfig, from_dict, to_dict
from .data import Dataset
from .errors import CheckpointError, ConfigError, InvalidArgument, TrainingDiverged
from .imageset import get_source, sample_training_input
from .masking import choose_anchor, plan_for_strategy, select_bands
from .model import ModelConfig, encode, forward_outputs, init_params, multiband_tokenize


@dataclass
class LogEntry:
    step: int
    phase: int
    lr: float
    loss: float
    baseline: float
    kinds: tuple[str, ...]


@dataclass
class PretrainResult:
    params: dict[str, nm.Tensor]
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    log: list[LogEntry]
    checkpoint_paths: list[str]


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict[int, float]
    n_eval: int


def _phase_records(dataset: Dataset, phases: tuple[Phase, ...]):
    per_phase = []
    for i, phase in enumerate(phases):
        records = dataset.by_kinds(phase.kinds)
        if not records:
            raise ConfigError(
                f"phase {i + 1} ({'/'.join(phase.kinds)}) has no matching sets in the dataset")
        per_phase.append(records)
    return per_phase


def pretrain(cfg: TrainConfig, dataset: Dataset, model_cfg: ModelConfig | None = None,
             out_dir=None) -> PretrainResult:
    """Run the full curriculum; returns parameters, configs, and the loss log."""
    if model_cfg is None:
        model_cfg = ModelConfig(geo_mode=cfg.geo_mode)
    elif model_cfg.geo_mode != cfg.geo_mode:
        model_cfg = dataclasses.replace(model_cfg, geo_mode=cfg.geo_mode)
    if dataset.input_size % model_cfg.patch_size:
        raise ConfigError(
            f"input size {dataset.input_size} not divisible by patch {model_cfg.patch_size}")

    phases = cfg.phases()
    per_phase = _phase_records(dataset, phases)
    steps_per_epoch = [math.ceil(len(records) / cfg.batch_size) for records in per_phase]
    total_steps = sum(phase.epochs * spe for phase, spe in zip(phases, steps_per_epoch))

    params = init_params(model_cfg, np.random.default_rng([cfg.seed, 0xA11]))
    state = nm.adamw_init(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    log: list[LogEntry] = []
    ckpt_paths: list[str] = []
    step = 0

    for phase_idx, (phase, records) in enumerate(zip(phases, per_phase), start=1):
        for _ in range(phase.epochs):
            order = rng.permutation(len(records))
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                losses, baselines, kinds = [], [], []
                for rec_idx in chunk:
                    rec = records[rec_idx]
                    inp = sample_training_input(rec.image_set(), rng)
                    metas = inp.metas
                    anchor = choose_anchor(metas, rng)
                    bands = select_bands([get_source(m.source) for m in metas], rng)
                    n_patches = (dataset.input_size // model_cfg.patch_size) ** 2
                    plan = plan_for_strategy(cfg.mask_strategy, metas, anchor,
                                             n_patches, cfg.mask_ratio, rng)
                    with nm.Tape() as tape:
                        loss, aux = forward_outputs(inp, plan, bands, model_cfg, params)
                        if not np.isfinite(loss.item()):
                            raise TrainingDiverged(step)
                        tape.backward(loss)
                    losses.append(loss.item())
                    masked = aux["targets"][aux["row_mask"].astype(bool)]
                    baselines.append(float(((masked - masked.mean()) ** 2).mean()))
                    kinds.append(rec.kind.value)
                lr = nm.cosine_lr(step, total_steps, cfg.base_lr, cfg.warmup_steps)
                state.lr = lr
                grads = {name: p.grad / len(chunk) for name, p in params.items()
                         if p.grad is not None}
                nm.adamw_step(params, grads, state)
                for p in params.values():
                    p.zero_grad()
                log.append(LogEntry(step=step, phase=phase_idx, lr=lr,
                                    loss=float(np.mean(losses)),
                                    baseline=float(np.mean(baselines)),
                                    kinds=tuple(kinds)))
                step += 1
        if out_dir is not None and phase_idx < len(phases):
            path = str(Path(out_dir) / f"phase{phase_idx}")
            save_checkpoint(path, params, model_cfg, cfg)
            ckpt_paths.append(path)

    if out_dir is not None:
        path = str(Path(out_dir) / "final")
        save_checkpoint(path, params, model_cfg, cfg)
        ckpt_paths.append(path)
    return PretrainResult(params=params, model_cfg=model_cfg, train_cfg=cfg,
                          log=log, checkpoint_paths=ckpt_paths)


def write_loss_log(path, log: list[LogEntry]) -> None:
    lines = ["step,phase,lr,loss"]
    lines += [f"{e.step},{e.phase},{e.lr!r},{e.loss!r}" for e in log]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + float32 blob


def save_checkpoint(path_prefix, params: dict[str, nm.Tensor], model_cfg: ModelConfig,
                    train_cfg: TrainConfig) -> None:
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "model": to_dict(model_cfg),
        "train": to_dict(train_cfg),
        "arrays": [{"name": name, "shape": list(p.shape)} for name, p in params.items()],
    }
    blob = b"".join(p.data.astype("<f4").tobytes(order="C") for p in params.values())
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    prefix.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path_prefix) -> tuple[dict[str, nm.Tensor], ModelConfig, TrainConfig]:
    prefix = Path(path_prefix)
    manifest_path = prefix.with_suffix(".json")
    blob_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"missing checkpoint pair {prefix}.json/.bin")
    manifest = json.loads(manifest_path.read_text())
    blob = blob_path.read_bytes()
    params: dict[str, nm.Tensor] = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if offset + nbytes > len(blob):
            raise CheckpointError(
                f"blob truncated at array {entry['name']!r}: needs {nbytes} bytes "
                f"at offset {offset}, blob has {len(blob)}")
        data = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(shape)
        params[entry["name"]] = nm.Tensor(data.astype(np.float64), requires_grad=True)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"blob has {len(blob) - offset} trailing bytes")
    model_cfg = from_dict(ModelConfig, manifest["model"])
    train_cfg = from_dict(TrainConfig, manifest["train"])
    return params, model_cfg, train_cfg


# ---------------------------------------------------------------------------
# frozen-feature linear probe


def _features(images, model_cfg: ModelConfig, params, with_geo: bool) -> np.ndarray:
    feats = []
    for img in images:
        if img.n_bands == 3:
            feats.append(encode(img, model_cfg, params, with_geo=with_geo))
        else:
            feats.append(multiband_tokenize(img, model_cfg, params, with_geo=with_geo))
    return np.stack(feats)


def linear_probe(params, model_cfg: ModelConfig, labeled, geo_at_finetune: bool = False,
                 heldout_frac: float = 0.3, seed: int = 0, ridge: float = 1e-3) -> ProbeResult:
    """Ridge-regression linear classifier on frozen pooled features.

    ``labeled`` is a list of (Image, label). The split is by location so a
    held-out location never leaks into training; a single-location input
    degenerates to evaluating on the training images. Supplying
    ``geo_at_finetune`` injects the geographic encoding at probe time when the
    backbone was pre-trained with the full geographic module.
    """
    if not labeled:
        raise InvalidArgument("no labeled images supplied")
    images = [img for img, _ in labeled]
    labels = np.array([lab for _, lab in labeled])
    if len(images) != len(labels):
        raise InvalidArgument("image/label count mismatch")

    with_geo = geo_at_finetune and model_cfg.geo_mode == "full_gem"
    feats = _features(images, model_cfg, params, with_geo)

    locations = np.array([img.meta.location_id for img in images])
    unique_locs = np.unique(locations)
    rng = np.random.default_rng([seed, 0xB0BE])
    shuffled = rng.permutation(unique_locs)
    if len(unique_locs) == 1:
        train_locs = eval_locs = set(unique_locs.tolist())
    else:
        n_eval = max(1, round(heldout_frac * len(unique_locs)))
        eval_locs = set(shuffled[:n_eval].tolist())
        train_locs = set(shuffled[n_eval:].tolist())
    train_idx = np.array([i for i, loc in enumerate(locations) if loc in train_locs])
    eval_idx = np.array([i for i, loc in enumerate(locations) if loc in eval_locs])

    classes = np.unique(labels)
    class_pos = {c: i for i, c in enumerate(classes)}
    x_train = np.hstack([feats[train_idx], np.ones((len(train_idx), 1))])
    y_train = np.zeros((len(train_idx), len(classes)))
    for row, lab in enumerate(labels[train_idx]):
        y_train[row, class_pos[lab]] = 1.0
    gram = x_train.T @ x_train + ridge * np.eye(x_train.shape[1])
    weights = np.linalg.solve(gram, x_train.T @ y_train)

    x_eval = np.hstack([feats[eval_idx], np.ones((len(eval_idx), 1))])
    pred = classes[np.argmax(x_eval @ weights, axis=1)]
    truth = labels[eval_idx]
    correct = pred == truth
    per_class = {int(c): float(correct[truth == c].mean())
                 for c in classes if np.any(truth == c)}
    return ProbeResult(accuracy=float(correct.mean()), per_class=per_class,
                       n_eval=int(len(eval_idx)))
