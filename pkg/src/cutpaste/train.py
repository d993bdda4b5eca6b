"""Training loop: joint supervised + synthetic objective with an EMA teacher.

Every stochastic choice draws from a purpose-keyed Philox stream (init,
split, batch order, unlabeled picks, per-sample synthesis), so a fixed seed
reproduces training bit-for-bit and a supervised run and a semi-supervised
run at the same seed share their initialization and labeled batch order,
making paired comparisons meaningful.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .arrays import ValidationError
from .colormatch import image_descriptor, match_top_k, sample_match
from .config import TrainConfig
from .losses import positive_weight, total_loss
from .metrics import average_precision, binarize, f1_jaccard
from .network import SegNet, save_params
from .optim import OptimizerState, ScheduleConfig, adamw_step, ema_update, lr_at
from .pngio import load_mask_png, load_png
from .rng import INIT, ORDER, SPLIT, SYNTH, UNLABELED, make_rng, stream_id
from .synthesis import synthesize_with_retry
from .toydata import SEALED_DIR


@dataclass
class Record:
    id: str
    image: np.ndarray
    mask: np.ndarray | None


@dataclass
class TrainResult:
    params: dict
    teacher_params: dict
    in_channels: int
    widths: tuple
    log: list = field(default_factory=list)
    w_pos: float = 1.0
    epochs_run: int = 0
    stopped_early: bool = False
    best_epoch: int = -1
    best_val_jaccard: float = float("nan")


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def load_manifest(path, require_mask: bool = False) -> list:
    """Load a JSON-lines manifest of {image, mask, id} rows into memory.

    Refuses to read anything under a sealed/ directory: that is held-out
    ground truth for analysis, never a training input.
    """
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in ("image", "mask"):
                value = row.get(key)
                if value and SEALED_DIR in os.path.normpath(value).split(os.sep):
                    raise ValidationError(
                        f"{path}:{line_no}: refusing to read sealed ground truth {value!r}"
                    )
            image = load_png(_resolve(base, row["image"]))
            mask = None
            if row.get("mask"):
                mask = load_mask_png(_resolve(base, row["mask"]))
            elif require_mask:
                raise ValidationError(f"{path}:{line_no}: record {row.get('id')!r} has no mask")
            records.append(Record(id=row.get("id", f"row{line_no}"), image=image, mask=mask))
    return records


def _stack_images(records, indices):
    return np.stack([records[i].image for i in indices])


def _stack_masks(records, indices):
    return np.stack([records[i].mask for i in indices]).astype(np.float64)


def _class_balance(records, indices):
    total = sum(int(records[i].mask.size) for i in indices)
    pos = sum(int(records[i].mask.sum()) for i in indices)
    return total, pos


def _predict_pool(net, params, records, chunk: int = 8):
    """Probability maps for a list of records, pooled flat with their truths."""
    scores, truths = [], []
    for start in range(0, len(records), chunk):
        batch = records[start : start + chunk]
        probs = net.predict(params, np.stack([r.image for r in batch]))
        for r, p in zip(batch, probs):
            scores.append(p.reshape(-1))
            if r.mask is not None:
                truths.append(r.mask.reshape(-1))
    return np.concatenate(scores), (np.concatenate(truths) if truths else None)


def train(cfg: TrainConfig, labeled_manifest, unlabeled_manifest=None, probe=None) -> TrainResult:
    """Train a segmentation network; probe(epoch, params, teacher) is an
    optional read-only diagnostics hook called after each epoch."""
    cfg.validate()
    seed = cfg.seed
    labeled = load_manifest(labeled_manifest, require_mask=True)
    if not labeled:
        raise ValidationError(f"{labeled_manifest}: labeled set is empty")
    channels = labeled[0].image.shape[2]
    unlabeled = []
    if unlabeled_manifest and cfg.lambda_u > 0:
        unlabeled = load_manifest(unlabeled_manifest)
    use_unlabeled = bool(unlabeled)

    n = len(labeled)
    perm = make_rng(seed, stream_id(SPLIT)).permutation(n)
    n_val = 0 if n < 2 or cfg.val_fraction == 0 else min(max(1, round(cfg.val_fraction * n)), n - 1)
    val_records = [labeled[i] for i in perm[:n_val]]
    train_records = [labeled[i] for i in perm[n_val:]]
    n_train = len(train_records)

    # class weight from the labeled training split only; falls back to
    # unweighted when the split has no positive pixels at all
    total_px, pos_px = _class_balance(train_records, range(n_train))
    w_pos = positive_weight(total_px, pos_px) if pos_px >= 1 else 1.0

    net = SegNet(in_channels=channels)
    params = net.init(make_rng(seed, stream_id(INIT)))
    teacher = None
    if use_unlabeled and cfg.teacher == "ema":
        teacher = {k: v.copy() for k, v in params.items()}

    table = None
    if use_unlabeled and cfg.synth.color_matching:
        unlab_desc = [image_descriptor(r.image) for r in unlabeled]
        lab_desc = [image_descriptor(r.image) for r in train_records]
        table = match_top_k(unlab_desc, lab_desc, cfg.synth.match_k)

    steps_per_epoch = math.ceil(n_train / cfg.batch_labeled)
    schedule = ScheduleConfig(cfg.lr, cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch)
    opt_state = OptimizerState()

    log = []
    best_val = -1.0
    best_epoch = -1
    best_params = None
    best_teacher = None
    bad_epochs = 0
    stopped_early = False
    global_step = 0

    for epoch in range(cfg.epochs):
        order = make_rng(seed, stream_id(ORDER, epoch)).permutation(n_train)
        sums = {"loss": 0.0, "loss_labeled": 0.0, "loss_synth_bce": 0.0, "loss_consistency": 0.0}
        rejections = 0
        last_lr = 0.0
        for b in range(steps_per_epoch):
            batch_idx = order[b * cfg.batch_labeled : (b + 1) * cfg.batch_labeled]
            x_l = _stack_images(train_records, batch_idx)
            y_l = _stack_masks(train_records, batch_idx)

            synth_batch = None
            if use_unlabeled:
                pick_rng = make_rng(seed, stream_id(UNLABELED, global_step))
                originals, blends, masks = [], [], []
                for slot in range(cfg.batch_synthetic):
                    u_i = int(pick_rng.integers(len(unlabeled)))

                    def pick_labeled(attempt, _rng, u_i=u_i):
                        if table is not None:
                            l_i = sample_match(table, u_i, pick_rng)
                        else:
                            l_i = int(pick_rng.integers(n_train))
                        rec = train_records[l_i]
                        return rec.image, rec.mask, l_i

                    sample, rej = synthesize_with_retry(
                        unlabeled[u_i].image,
                        pick_labeled,
                        cfg.synth,
                        make_rng(seed, stream_id(SYNTH, global_step, slot)),
                        provenance_base=(u_i, seed),
                    )
                    rejections += rej
                    if sample is not None:
                        originals.append(sample.original)
                        blends.append(sample.blended)
                        masks.append(sample.mask.astype(np.float64))
                if originals:
                    synth_batch = (np.stack(originals), np.stack(blends), np.stack(masks))

            last_lr = lr_at(global_step, schedule)
            teacher_for_step = teacher if teacher is not None else params
            result = total_loss(
                net,
                params,
                teacher_for_step,
                (x_l, y_l),
                synth_batch,
                cfg.lambda_u if use_unlabeled else 0.0,
                w_pos,
                cfg.consistency,
            )
            if not np.isfinite(result.value):
                raise RuntimeError(
                    f"non-finite loss {result.value} at epoch {epoch} step {global_step}"
                )
            adamw_step(
                params,
                result.grads,
                opt_state,
                last_lr,
                cfg.beta1,
                cfg.beta2,
                weight_decay=cfg.weight_decay,
            )
            if teacher is not None:
                ema_update(teacher, params, cfg.ema_decay)
            global_step += 1
            sums["loss"] += result.value
            sums["loss_labeled"] += result.labeled_bce
            sums["loss_synth_bce"] += result.synth_bce
            sums["loss_consistency"] += result.consistency

        entry = {
            "epoch": epoch,
            "lr": last_lr,
            "steps": steps_per_epoch,
            "rejections": rejections,
        }
        for key, value in sums.items():
            entry[key] = value / steps_per_epoch

        if n_val:
            scores, truths = _predict_pool(net, params, val_records)
            val_f1, val_j = f1_jaccard(binarize(scores, cfg.eval_threshold), truths)
            entry["val_jaccard"] = val_j
            entry["val_f1"] = val_f1
            # snapshot also on plateaus (>=) so the kept model tracks the
            # latest equally-good epoch; patience counts strict improvements
            if val_j > best_val:
                bad_epochs = 0
            else:
                bad_epochs += 1
            if val_j >= best_val:
                best_val = val_j
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
                best_teacher = {k: v.copy() for k, v in (teacher or params).items()}
        log.append(entry)
        if probe is not None:
            probe(epoch, params, teacher)

        if n_val and bad_epochs >= cfg.patience and epoch + 1 >= cfg.min_epochs:
            stopped_early = True
            break

    if best_params is not None:
        params = best_params
        teacher = best_teacher
    if teacher is None:
        teacher = {k: v.copy() for k, v in params.items()}

    return TrainResult(
        params=params,
        teacher_params=teacher,
        in_channels=channels,
        widths=net.widths,
        log=log,
        w_pos=w_pos,
        epochs_run=len(log),
        stopped_early=stopped_early,
        best_epoch=best_epoch,
        best_val_jaccard=best_val if best_epoch >= 0 else float("nan"),
    )


def evaluate(net: SegNet, params: dict, manifest, threshold: float = 0.5) -> dict:
    """Pooled test metrics: AUC-PR over the score sweep, F1/Jaccard at a threshold."""
    records = load_manifest(manifest, require_mask=True)
    if not records:
        raise ValidationError(f"{manifest}: evaluation set is empty")
    scores, truths = _predict_pool(net, params, records)
    f1, jac = f1_jaccard(binarize(scores, threshold), truths)
    return {
        "auc_pr": average_precision(scores, truths),
        "f1": f1,
        "jaccard": jac,
        "threshold": threshold,
        "n_images": len(records),
        "n_pixels": int(truths.size),
    }


def save_run(result: TrainResult, out_dir) -> None:
    """Write params.cpt/teacher.cpt with shape indexes plus log.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    save_params(
        result.params,
        result.in_channels,
        result.widths,
        os.path.join(out_dir, "params.cpt"),
        os.path.join(out_dir, "params.index.json"),
    )
    save_params(
        result.teacher_params,
        result.in_channels,
        result.widths,
        os.path.join(out_dir, "teacher.cpt"),
        os.path.join(out_dir, "teacher.index.json"),
    )
    with open(os.path.join(out_dir, "log.jsonl"), "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry) + "\n")
