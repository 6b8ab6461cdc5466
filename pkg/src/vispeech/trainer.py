"""Training loops: affinity-gated pretraining, transfer fine-tuning, checkpoints.

Pretraining walks the corpus in seeded shuffled batches of clips.  Every
clip feeds the frame-order task; only clips the voice-activity detector
marks High additionally feed the pair-classification and contrastive
losses.  One optimizer step per batch.  Given the same scans, config and
seed, the metrics log is bit-identical across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import SEGMENT_SAMPLES, Affinity, AudioBuffer, log_spectrogram, vad_affinity
from .losses import (
    NUM_ORDER_CLASSES,
    LossWeights,
    cross_entropy,
    joint_loss,
    loss_cls,
    loss_cont,
    loss_ord,
)
from .metrics import (
    build_density_map,
    confusion_matrix,
    metric_auc,
    metric_cc,
    metric_kl,
    metric_nss,
    metric_sim,
    precision_recall_f1,
)
from .networks import ConvEncoder, EncoderConfig, LinearHead, MLPHead, SaliencyDecoder, frames_to_input, spectrograms_to_input
from .optim import ParamStore, lr_at_epoch, sgd_update
from .records import RecordFormatError, read_tensor_records, write_tensor_records
from .sampling import SamplerConfig, sample_hard_pairs, sample_order_clip
from .synth import ClipInterval, DatasetManifest, ScanSequence
from .tensor import Tensor, add, log, multiply, neg, no_grad, scale, tsum

__all__ = [
    "TrainConfig",
    "config_to_dict",
    "config_from_dict",
    "CrossModalModel",
    "Checkpoint",
    "MissingAnnotations",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "pretrain",
    "evaluate_pairs",
    "evaluate_order",
    "finetune_classification",
    "finetune_saliency",
]

CHECKPOINT_VERSION = 1


class MissingAnnotations(ValueError):
    """A fine-tuning split lacks the labels or fixations its task needs."""


def _default_speech_encoder():
    return EncoderConfig(input_hw=(256, 256), first_stride=2)


@dataclass
class TrainConfig:
    """Hyperparameters for pretraining and the fine-tuning stages.

    Defaults are the full-scale settings (80 epochs, batch 32); desk-scale
    runs override epochs and sizes through the presets module.
    """

    epochs: int = 80
    batch_size: int = 32          # clips per optimizer step
    groups: int = 2               # positive/negative pair groups per clip
    shift_range: int = 5          # max clip shift for hard negatives
    base_lr: float = 1e-3
    lr_decay_every: int = 20
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 5.0
    weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 1.0, 1.0))
    seed: int = 0
    use_contrastive: bool = True  # ablation: drop the contrastive term
    use_curriculum: bool = True   # ablation: drop affinity gating and the order task
    video_encoder: EncoderConfig = field(default_factory=EncoderConfig)
    speech_encoder: EncoderConfig = field(default_factory=_default_speech_encoder)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(
                f"batch_size must be >= 2 (in-batch negatives), got {self.batch_size}"
            )
        if self.groups < 1 or self.shift_range < 1:
            raise ValueError("groups and shift_range must be >= 1")
        if self.video_encoder.feat_dim != self.speech_encoder.feat_dim:
            raise ValueError(
                "encoders must agree on feat_dim for the shared projection, got "
                f"{self.video_encoder.feat_dim} vs {self.speech_encoder.feat_dim}"
            )


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def _strict_kwargs(d: dict, allowed, what: str) -> dict:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {what} keys: {', '.join(unknown)}")
    return dict(d)


def _encoder_from_dict(d: dict) -> EncoderConfig:
    kw = _strict_kwargs(d, [f.name for f in fields(EncoderConfig)], "encoder config")
    for key in ("input_hw", "widths"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return EncoderConfig(**kw)


def config_from_dict(d: dict) -> TrainConfig:
    """Build a TrainConfig from a plain dict, rejecting unknown keys."""
    kw = _strict_kwargs(d, [f.name for f in fields(TrainConfig)], "train config")
    if "weights" in kw:
        w = _strict_kwargs(kw["weights"], [f.name for f in fields(LossWeights)], "loss weight")
        kw["weights"] = LossWeights(**w)
    for key in ("video_encoder", "speech_encoder"):
        if key in kw:
            kw[key] = _encoder_from_dict(kw[key])
    return TrainConfig(**kw)


class CrossModalModel:
    """Both encoders plus the shared projection and the two task heads."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        vc = cfg.video_encoder
        self.cfg = cfg
        self.video_enc = ConvEncoder(vc, rng, "video")
        self.speech_enc = ConvEncoder(cfg.speech_encoder, rng, "speech")
        self.proj = MLPHead(vc.feat_dim, vc.proj_hidden, vc.embed_dim, rng, "proj")
        self.fuse = MLPHead(2 * vc.feat_dim, 64, 2, rng, "fuse")
        self.order = MLPHead(4 * vc.feat_dim, 64, NUM_ORDER_CLASSES, rng, "order")

    def parts(self):
        return (self.video_enc, self.speech_enc, self.proj, self.fuse, self.order)

    def param_store(self) -> ParamStore:
        store = ParamStore()
        for part in self.parts():
            for name, t in part.params().items():
                store.add(name, t)
        return store

    def load_params(self, arrays: dict):
        named = {}
        for part in self.parts():
            named.update(part.params())
        extra = sorted(set(arrays) - set(named))
        if extra:
            raise ValueError(f"unexpected parameters: {', '.join(extra)}")
        _load_module_params(named, arrays)


def _load_module_params(named: dict, arrays: dict):
    for name, t in named.items():
        if name not in arrays:
            raise ValueError(f"checkpoint missing parameter {name}")
        src = np.asarray(arrays[name], dtype=np.float32)
        if src.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: {src.shape} vs {t.data.shape}")
        t.data[...] = src


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: dict
    momentum: dict
    epoch: int        # completed epochs
    config: dict
    rng_state: dict


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_checkpoint(cp: Checkpoint, path) -> None:
    path = Path(path)
    arrays = dict(cp.params)
    for name, m in cp.momentum.items():
        arrays["momentum/" + name] = m
    write_tensor_records(path, arrays)
    header = {
        "format": "vispeech-checkpoint",
        "version": CHECKPOINT_VERSION,
        "epoch": cp.epoch,
        "config": cp.config,
        "rng_state": cp.rng_state,
    }
    _header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    header_file = _header_path(path)
    if not header_file.exists():
        raise RecordFormatError(f"missing checkpoint header {header_file}")
    header = json.loads(header_file.read_text())
    if header.get("format") != "vispeech-checkpoint":
        raise RecordFormatError(f"{header_file} is not a checkpoint header")
    if header.get("version") != CHECKPOINT_VERSION:
        raise RecordFormatError(f"unsupported checkpoint version {header.get('version')}")
    arrays = read_tensor_records(path)
    params, momentum = {}, {}
    for name, arr in arrays.items():
        if name.startswith("momentum/"):
            momentum[name[len("momentum/"):]] = arr
        else:
            params[name] = arr
    return Checkpoint(params, momentum, int(header["epoch"]), header["config"], header["rng_state"])


def model_from_checkpoint(cp: Checkpoint) -> CrossModalModel:
    model = CrossModalModel(config_from_dict(cp.config), np.random.default_rng(0))
    model.load_params(cp.params)
    return model


# ---------------------------------------------------------------------------
# pretraining

@dataclass
class _ClipRef:
    scan: ScanSequence
    clip: ClipInterval
    high: bool


def _resolve_scans(source, split: str) -> list[ScanSequence]:
    if isinstance(source, DatasetManifest):
        return source.load_split(split)
    if isinstance(source, ScanSequence):
        return [source]
    return list(source)


def _split_pair(source):
    """Fine-tuning data: a manifest's two splits, or a (train, test) pair."""
    if isinstance(source, DatasetManifest):
        return source.load_split("finetune_train"), source.load_split("finetune_test")
    train, test = source
    return list(train), list(test)


def _collect_clips(scans) -> list[_ClipRef]:
    refs = []
    for scan in scans:
        clips = scan.clips()
        spans = [c.audio_span(scan.fps, scan.audio.sample_rate) for c in clips]
        segments = vad_affinity(scan.audio, spans)
        for clip, seg in zip(clips, segments):
            refs.append(_ClipRef(scan, clip, seg.level is Affinity.HIGH))
    return refs


def _train_batch(model, store, batch, cfg, sampler, rng, lr):
    order_samples = []
    pos_pairs, neg_pairs = [], []
    n_high = 0
    for ref in batch:
        if cfg.use_curriculum:
            order_samples.append(sample_order_clip(ref.scan, ref.clip, rng))
        if ref.high:
            n_high += 1
        if ref.high or not cfg.use_curriculum:
            pairs = sample_hard_pairs(ref.scan, ref.clip, sampler, rng)
            pos_pairs.extend(pairs[: sampler.groups])
            neg_pairs.extend(pairs[sampler.groups :])
    if not order_samples and not pos_pairs:
        raise RuntimeError("batch produced no training samples")

    stats = {
        "cls": None, "cont": None, "ord": None,
        "pair_correct": 0, "pair_total": 0,
        "order_correct": 0, "order_total": 0,
        "high": n_high, "clips": len(batch),
    }
    l_cls = l_cont = l_ord = 0.0
    if pos_pairs:
        n = len(pos_pairs)
        v_feat = model.video_enc.features(frames_to_input(np.stack([p.frame for p in pos_pairs])))
        s_pos = model.speech_enc.features(spectrograms_to_input([p.spectrogram for p in pos_pairs]))
        s_neg = model.speech_enc.features(spectrograms_to_input([p.spectrogram for p in neg_pairs]))
        logit_pos = model.fuse.forward_concat([v_feat, s_pos])
        logit_neg = model.fuse.forward_concat([v_feat, s_neg])
        l_cls = scale(
            add(
                loss_cls(logit_pos, np.ones(n, dtype=np.int64)),
                loss_cls(logit_neg, np.zeros(n, dtype=np.int64)),
            ),
            0.5,
        )
        stats["cls"] = float(l_cls.data)
        stats["pair_correct"] = int(
            (logit_pos.data.argmax(axis=1) == 1).sum() + (logit_neg.data.argmax(axis=1) == 0).sum()
        )
        stats["pair_total"] = 2 * n
        if cfg.use_contrastive:
            l_cont = loss_cont(
                model.proj.forward(v_feat),
                model.proj.forward(s_pos),
                model.proj.forward(s_neg),
            )
            stats["cont"] = float(l_cont.data)
    if order_samples:
        crops = np.stack([s.frames for s in order_samples])
        parts = [model.video_enc.features(frames_to_input(crops[:, j])) for j in range(4)]
        logits = model.order.forward_concat(parts)
        targets = np.array([s.perm_class for s in order_samples], dtype=np.int64)
        l_ord = loss_ord(logits, targets)
        stats["ord"] = float(l_ord.data)
        stats["order_correct"] = int((logits.data.argmax(axis=1) == targets).sum())
        stats["order_total"] = len(order_samples)

    joint = joint_loss(l_cls, l_cont, l_ord, cfg.weights)
    stats["joint"] = float(joint.data)
    store.zero_grad()
    joint.backward()
    sgd_update(store, lr, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
    return stats


def pretrain(source, cfg: TrainConfig, log_path=None, resume: Checkpoint | None = None):
    """Run the self-supervised loop; returns (Checkpoint, per-epoch rows).

    ``source`` is a DatasetManifest (its pretrain split is used) or a list
    of ScanSequence.  ``log_path`` streams each epoch row as one JSON
    line.  ``resume`` continues a saved run from its recorded epoch; the
    schedule and RNG pick up exactly where they stopped.
    """
    scans = _resolve_scans(source, "pretrain")
    if not scans:
        raise ValueError("pretrain: no scans to train on")
    rng = np.random.default_rng(cfg.seed)
    model = CrossModalModel(cfg, rng)
    store = model.param_store()
    start_epoch = 0
    if resume is not None:
        _check_resume_config(cfg, resume)
        model.load_params(resume.params)
        store.load_state_arrays({**resume.params, **{"momentum/" + k: v for k, v in resume.momentum.items()}})
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
    refs = _collect_clips(scans)
    if not refs:
        raise ValueError("pretrain: scans contain no clips")
    sampler = SamplerConfig(groups=cfg.groups, shift_range=cfg.shift_range)

    history = []
    log_file = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_at_epoch(epoch, cfg.base_lr, cfg.lr_decay_every, cfg.lr_decay_factor)
            perm = rng.permutation(len(refs))
            sums = {"joint": 0.0, "cls": 0.0, "cont": 0.0, "ord": 0.0}
            counts = {"cls": 0, "cont": 0, "ord": 0}
            pair_correct = pair_total = order_correct = order_total = 0
            clips_seen = high_seen = batches = 0
            for lo in range(0, len(refs), cfg.batch_size):
                batch = [refs[i] for i in perm[lo : lo + cfg.batch_size]]
                try:
                    stats = _train_batch(model, store, batch, cfg, sampler, rng, lr)
                except FloatingPointError as exc:
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {batches}: {exc}"
                    ) from exc
                if not math.isfinite(stats["joint"]):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {batches}: {stats['joint']}"
                    )
                batches += 1
                sums["joint"] += stats["joint"]
                for key in ("cls", "cont", "ord"):
                    if stats[key] is not None:
                        sums[key] += stats[key]
                        counts[key] += 1
                pair_correct += stats["pair_correct"]
                pair_total += stats["pair_total"]
                order_correct += stats["order_correct"]
                order_total += stats["order_total"]
                clips_seen += stats["clips"]
                high_seen += stats["high"]
            row = {
                "epoch": epoch,
                "lr": lr,
                "loss": sums["joint"] / batches,
                "loss_cls": sums["cls"] / counts["cls"] if counts["cls"] else None,
                "loss_cont": sums["cont"] / counts["cont"] if counts["cont"] else None,
                "loss_ord": sums["ord"] / counts["ord"] if counts["ord"] else None,
                "pair_acc": pair_correct / pair_total if pair_total else None,
                "order_acc": order_correct / order_total if order_total else None,
                "clips": clips_seen,
                "high_clips": high_seen,
                "pair_count": pair_total,
            }
            history.append(row)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    checkpoint = Checkpoint(
        params={name: t.data.copy() for name, t in store.items()},
        momentum={name: store.momentum(name).copy() for name in store.names()},
        epoch=cfg.epochs,
        config=config_to_dict(cfg),
        rng_state=rng.bit_generator.state,
    )
    return checkpoint, history


def _check_resume_config(cfg: TrainConfig, resume: Checkpoint):
    # Everything except the epoch target must match the original run.
    ours = json.loads(json.dumps(config_to_dict(cfg)))
    theirs = json.loads(json.dumps(config_to_dict(config_from_dict(resume.config))))
    ours.pop("epochs")
    theirs.pop("epochs")
    if ours != theirs:
        raise ValueError("resume: config does not match the checkpoint")


# ---------------------------------------------------------------------------
# held-out evaluation

def _segment_spectrogram(scan: ScanSequence, start: int):
    seg = scan.audio.samples[start : start + SEGMENT_SAMPLES]
    return log_spectrogram(AudioBuffer(seg, scan.audio.sample_rate))


def evaluate_pairs(
    model: CrossModalModel,
    scans,
    rng: np.random.Generator,
    groups: int = 2,
    shift_range: int = 5,
    require_active_negatives: bool = True,
    chunk: int = 32,
) -> dict:
    """Pair-classification accuracy and similarity gap on held-out scans.

    Anchors come from speech-active clips, and negative segments are drawn
    only from shifted clips that are themselves speech-active (unless
    disabled), so the score measures cross-modal correspondence rather
    than silence detection.
    """
    frames, pos_specs, neg_specs = [], [], []
    for scan in scans:
        clips = scan.clips()
        spans = [c.audio_span(scan.fps, scan.audio.sample_rate) for c in clips]
        active = [s.level is Affinity.HIGH for s in vad_affinity(scan.audio, spans)]
        total = len(scan.frames)
        for ci, clip in enumerate(clips):
            if not active[ci]:
                continue
            candidates = []
            for delta in range(1, shift_range + 1):
                fwd = clip.start + delta * clip.length
                bwd = clip.start - delta * clip.length
                if fwd + clip.length <= total:
                    target = fwd
                elif bwd >= 0:
                    target = bwd
                else:
                    continue
                j = target // clip.length  # clips() yields a contiguous grid
                if not require_active_negatives or active[j]:
                    candidates.append(j)
            if not candidates:
                continue
            s0, s1 = spans[ci]
            for _ in range(groups):
                fidx = clip.start + int(rng.integers(clip.length))
                pos_start = int(rng.integers(s0, s1 - SEGMENT_SAMPLES + 1))
                t0, t1 = spans[candidates[int(rng.integers(len(candidates)))]]
                neg_start = int(rng.integers(t0, t1 - SEGMENT_SAMPLES + 1))
                frames.append(scan.frames[fidx])
                pos_specs.append(_segment_spectrogram(scan, pos_start))
                neg_specs.append(_segment_spectrogram(scan, neg_start))
    if not frames:
        raise ValueError("evaluate_pairs: no eligible clips in the given scans")

    correct = 0
    pos_sims, neg_sims = [], []
    with no_grad():
        for lo in range(0, len(frames), chunk):
            sl = slice(lo, lo + chunk)
            v = model.video_enc.features(frames_to_input(np.stack(frames[sl])))
            sp = model.speech_enc.features(spectrograms_to_input(pos_specs[sl]))
            sn = model.speech_enc.features(spectrograms_to_input(neg_specs[sl]))
            lp = model.fuse.forward_concat([v, sp]).data
            ln = model.fuse.forward_concat([v, sn]).data
            correct += int((lp.argmax(axis=1) == 1).sum() + (ln.argmax(axis=1) == 0).sum())
            yv = model.proj.forward(v).data.astype(np.float64)
            ys = model.proj.forward(sp).data.astype(np.float64)
            yn = model.proj.forward(sn).data.astype(np.float64)
            pos_sims.extend((yv * ys).sum(axis=1))
            neg_sims.extend((yv * yn).sum(axis=1))
    n = len(frames)
    pos_mean = float(np.mean(pos_sims))
    neg_mean = float(np.mean(neg_sims))
    return {
        "accuracy": correct / (2 * n),
        "pos_sim": pos_mean,
        "neg_sim": neg_mean,
        "sim_gap": pos_mean - neg_mean,
        "num_pairs": 2 * n,
    }


def evaluate_order(model: CrossModalModel, scans, rng, per_clip: int = 2, chunk: int = 64) -> dict:
    """Order-prediction accuracy over fresh permutations of held-out clips."""
    samples = [
        sample_order_clip(scan, clip, rng)
        for scan in scans
        for clip in scan.clips()
        for _ in range(per_clip)
    ]
    if not samples:
        raise ValueError("evaluate_order: no clips in the given scans")
    correct = 0
    with no_grad():
        for lo in range(0, len(samples), chunk):
            batch = samples[lo : lo + chunk]
            crops = np.stack([s.frames for s in batch])
            parts = [model.video_enc.features(frames_to_input(crops[:, j])) for j in range(4)]
            logits = model.order.forward_concat(parts).data
            targets = np.array([s.perm_class for s in batch])
            correct += int((logits.argmax(axis=1) == targets).sum())
    return {"accuracy": correct / len(samples), "num_samples": len(samples)}


# ---------------------------------------------------------------------------
# transfer: plane-analogue classification

def _video_encoder_from(init_params, cfg: TrainConfig, rng) -> ConvEncoder:
    enc = ConvEncoder(cfg.video_encoder, rng, "video")
    if init_params is not None:
        _load_module_params(enc.params(), {k: v for k, v in init_params.items() if k.startswith("video.")})
    return enc


def _freeze(module):
    for t in module.params().values():
        t.requires_grad = False


def _train_samples(scans, rng, frames_per_clip):
    out = []
    for si, scan in enumerate(scans):
        for clip in scan.clips():
            k = min(frames_per_clip, clip.length)
            for off in rng.choice(clip.length, size=k, replace=False):
                out.append((si, clip.start + int(off)))
    return out


def _eval_samples(scans, frames_per_clip):
    out = []
    for si, scan in enumerate(scans):
        for clip in scan.clips():
            k = min(frames_per_clip, clip.length)
            for off in np.linspace(0, clip.length - 1, k).round().astype(int):
                out.append((si, clip.start + int(off)))
    return out


def finetune_classification(
    init_params,
    source,
    cfg: TrainConfig,
    frozen: bool = False,
    frames_per_clip: int = 3,
    eval_frames_per_clip: int = 4,
) -> dict:
    """Train a frame classifier on top of the video encoder and evaluate it.

    ``init_params`` holds pretrained weights (``None`` trains from random
    init).  ``frozen`` turns fine-tuning into a linear probe.  Returns the
    evaluation report with per-class and macro precision/recall/F1.
    """
    train_scans, test_scans = _split_pair(source)
    for scan in train_scans + test_scans:
        if scan.labels is None:
            raise MissingAnnotations("finetune_classification: scan has no labels")
    if not train_scans or not test_scans:
        raise ValueError("finetune_classification: empty split")
    num_classes = int(max(int(s.labels.max()) for s in train_scans + test_scans)) + 1

    rng = np.random.default_rng(cfg.seed)
    encoder = _video_encoder_from(init_params, cfg, rng)
    head = LinearHead(cfg.video_encoder.feat_dim, num_classes, rng, "classifier")
    store = ParamStore()
    if frozen:
        _freeze(encoder)
    else:
        for name, t in encoder.params().items():
            store.add(name, t)
    for name, t in head.params().items():
        store.add(name, t)

    samples = _train_samples(train_scans, rng, frames_per_clip)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg.base_lr, cfg.lr_decay_every, cfg.lr_decay_factor)
        order = rng.permutation(len(samples))
        total = 0.0
        batches = 0
        for lo in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[lo : lo + cfg.batch_size]]
            x = frames_to_input(np.stack([train_scans[si].frames[fi] for si, fi in batch]))
            y = np.array([train_scans[si].labels[fi] for si, fi in batch], dtype=np.int64)
            loss = cross_entropy(head.forward(encoder.features(x)), y, num_classes)
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {batches}")
            store.zero_grad()
            loss.backward()
            sgd_update(store, lr, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
            total += value
            batches += 1
        history.append({"epoch": epoch, "lr": lr, "loss": total / batches})

    eval_set = _eval_samples(test_scans, eval_frames_per_clip)
    y_true, y_pred = [], []
    with no_grad():
        for lo in range(0, len(eval_set), cfg.batch_size):
            batch = eval_set[lo : lo + cfg.batch_size]
            x = frames_to_input(np.stack([test_scans[si].frames[fi] for si, fi in batch]))
            logits = head.forward(encoder.features(x)).data
            y_pred.extend(logits.argmax(axis=1))
            y_true.extend(test_scans[si].labels[fi] for si, fi in batch)
    confusion = confusion_matrix(y_true, y_pred, num_classes)
    scores = precision_recall_f1(confusion)
    return {
        "task": "classification",
        "init": "random" if init_params is None else "pretrained",
        "frozen": frozen,
        "num_classes": num_classes,
        "macro_precision": scores["macro_precision"],
        "macro_recall": scores["macro_recall"],
        "macro_f1": scores["macro_f1"],
        "per_class": {
            "precision": [float(v) for v in scores["precision"]],
            "recall": [float(v) for v in scores["recall"]],
            "f1": [float(v) for v in scores["f1"]],
        },
        "confusion": confusion.tolist(),
        "num_train": len(samples),
        "num_test": len(eval_set),
        "history": history,
    }


# ---------------------------------------------------------------------------
# transfer: gaze saliency

def finetune_saliency(
    init_params,
    source,
    cfg: TrainConfig,
    frozen: bool = False,
    frames_per_clip: int = 2,
    eval_frames_per_clip: int = 3,
    sigma: float = 2.0,
) -> dict:
    """Train the saliency decoder against blurred fixation maps.

    The loss is the cross-entropy part of KL(gt || pred); the report
    carries all five saliency metrics on the held-out split.
    """
    train_scans, test_scans = _split_pair(source)
    for scan in train_scans + test_scans:
        if scan.fixations is None:
            raise MissingAnnotations("finetune_saliency: scan has no fixations")
    if not train_scans or not test_scans:
        raise ValueError("finetune_saliency: empty split")
    frame_hw = train_scans[0].frames.shape[1:]

    rng = np.random.default_rng(cfg.seed)
    encoder = _video_encoder_from(init_params, cfg, rng)
    decoder = SaliencyDecoder(
        cfg.video_encoder.widths[-1],
        total_factor=8 * cfg.video_encoder.first_stride,
        rng=rng,
        prefix="saliency",
    )
    store = ParamStore()
    if frozen:
        _freeze(encoder)
    else:
        for name, t in encoder.params().items():
            store.add(name, t)
    for name, t in decoder.params().items():
        store.add(name, t)

    samples = _train_samples(train_scans, rng, frames_per_clip)
    densities = {}  # (scan, frame) -> blurred target, built lazily

    def target_map(scans, si, fi):
        key = (id(scans[si]), fi)
        if key not in densities:
            densities[key] = build_density_map(
                [scans[si].fixations[fi]], frame_hw, sigma=sigma
            ).density.astype(np.float32)
        return densities[key]

    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg.base_lr, cfg.lr_decay_every, cfg.lr_decay_factor)
        order = rng.permutation(len(samples))
        total = 0.0
        batches = 0
        for lo in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[lo : lo + cfg.batch_size]]
            x = frames_to_input(np.stack([train_scans[si].frames[fi] for si, fi in batch]))
            gt = Tensor(np.stack([target_map(train_scans, si, fi) for si, fi in batch])[:, None])
            pred = decoder.forward(encoder.conv_features(x))
            # cross-entropy piece of KL(gt || pred); the gt entropy is constant
            loss = scale(neg(tsum(multiply(log(pred + 1e-12), gt))), 1.0 / len(batch))
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {batches}")
            store.zero_grad()
            loss.backward()
            sgd_update(store, lr, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
            total += value
            batches += 1
        history.append({"epoch": epoch, "lr": lr, "loss": total / batches})

    eval_set = _eval_samples(test_scans, eval_frames_per_clip)
    per_scan = {si: {k: [] for k in ("kl", "nss", "auc", "cc", "sim")} for si in range(len(test_scans))}
    with no_grad():
        for lo in range(0, len(eval_set), cfg.batch_size):
            batch = eval_set[lo : lo + cfg.batch_size]
            x = frames_to_input(np.stack([test_scans[si].frames[fi] for si, fi in batch]))
            preds = decoder.forward(encoder.conv_features(x)).data[:, 0].astype(np.float64)
            for (si, fi), pred in zip(batch, preds):
                point = test_scans[si].fixations[fi]
                gt = target_map(test_scans, si, fi).astype(np.float64)
                gt = gt / gt.sum()  # f32 storage drifts the sum slightly
                pred = pred / pred.sum()
                per_scan[si]["kl"].append(metric_kl(pred, gt))
                per_scan[si]["nss"].append(metric_nss(pred, [point]))
                per_scan[si]["auc"].append(metric_auc(pred, [point]))
                per_scan[si]["cc"].append(metric_cc(pred, gt))
                per_scan[si]["sim"].append(metric_sim(pred, gt))
    report = {
        "task": "saliency",
        "init": "random" if init_params is None else "pretrained",
        "frozen": frozen,
        "num_train": len(samples),
        "num_test": len(eval_set),
        "history": history,
    }
    for key in ("kl", "nss", "auc", "cc", "sim"):
        values = [v for si in per_scan for v in per_scan[si][key]]
        report[key] = float(np.mean(values))
    report["per_scan"] = [
        {"scan": si, **{k: float(np.mean(v)) for k, v in per_scan[si].items()}}
        for si in sorted(per_scan)
    ]
    return report
