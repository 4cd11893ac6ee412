"""Two-stage training: contrastive pretraining, then distillation fine-tuning.

Stage 1 fits both heads with identity targets. Stage 2 starts from a stage-1
checkpoint and replaces the targets with softmaxed agreements averaged over
one or more frozen stage-1 teachers, optionally mixed with the identity
targets via ``LossConfig.lam``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .correspondence import LossConfig, agreement_matrix, ensemble_agreements, identity_targets
from .data_io import Checkpoint, DatasetManifest, read_checkpoint
from .encoder import DEFAULT_EMBED_DIM, DEFAULT_HIDDEN, backward, forward, forward_with_cache, init_params
from .errors import ConfigError, DataError, NumericError
from .losses import combined_loss, combined_targets, loss_gradient_wrt_agreements, supervised_loss
from .metrics import evaluate_retrieval
from .numerics import matmul
from .optim import AdamState, ScheduleConfig, adam_step, lr_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    stage: int = 1
    teacher_checkpoint_paths: tuple = ()
    hidden_dims: tuple = DEFAULT_HIDDEN
    embed_dim: int = DEFAULT_EMBED_DIM
    validation_split: str = "validation"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for contrastive batches, got {self.batch_size}")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def add(self, epoch: int, train_loss: float, val_map_at_10: float, lr: float) -> None:
        self.records.append(
            {"epoch": epoch, "train_loss": train_loss, "val_map_at_10": val_map_at_10, "lr": lr}
        )

    def __len__(self):
        return len(self.records)

    def to_json(self) -> dict:
        return {"epochs": list(self.records)}


def make_epoch_batches(manifest: DatasetManifest, split: str, batch_size: int, seed: int, epoch_index: int):
    """Shuffle the split's audios and pair each with one random caption.

    Returns a list of ``(k, 2)`` int arrays of ``(audio, caption)`` rows. A
    trailing batch with fewer than two pairs is dropped.
    """
    audios = manifest.split_audios(split)
    if audios.size == 0:
        raise DataError(f"split {split!r} is empty")
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    rng = np.random.default_rng([seed, epoch_index])
    by_audio = manifest.captions_by_audio()
    chosen = np.array([by_audio[int(a)][rng.integers(by_audio[int(a)].size)] for a in audios])
    order = rng.permutation(audios.size)
    pairs = np.stack([audios[order], chosen[order]], axis=1)
    batches = [pairs[s:s + batch_size] for s in range(0, len(pairs), batch_size)]
    return [b for b in batches if len(b) >= 2]


def _check_teacher(teacher: Checkpoint, manifest: DatasetManifest, k: int) -> None:
    dims = (teacher.audio.layer_dims[0], teacher.caption.layer_dims[0])
    want = (manifest.audio_features.shape[1], manifest.caption_features.shape[1])
    if dims != want:
        raise ConfigError(f"teacher {k} expects input dims {dims}, data has {want}")
    if teacher.audio.embed_dim != teacher.caption.embed_dim:
        raise ConfigError(f"teacher {k} heads disagree on embedding size")


def teacher_batch_agreements(teachers, audio_features, caption_features) -> np.ndarray:
    """Mean agreement matrix of the frozen teachers on one batch."""
    if not teachers:
        raise ConfigError("need at least one teacher")
    members = []
    for t in teachers:
        if t.audio.layer_dims[0] != audio_features.shape[1] or t.caption.layer_dims[0] != caption_features.shape[1]:
            raise ConfigError("teacher input dimensions do not match the batch features")
        members.append(agreement_matrix(forward(t.audio, audio_features), forward(t.caption, caption_features)))
    return ensemble_agreements(members)


def batch_gradients(audio, caption, xa, xc, targets, loss_cfg: LossConfig):
    """Agreements, dL/dC and parameter gradients (audio head then caption head) for one batch."""
    emb_a, cache_a = forward_with_cache(audio, xa)
    emb_c, cache_c = forward_with_cache(caption, xc)
    c = agreement_matrix(emb_a, emb_c)
    d_c = loss_gradient_wrt_agreements(targets, c, loss_cfg)
    grads = backward(audio, cache_a, matmul(d_c, emb_c)) + backward(caption, cache_c, matmul(d_c.T, emb_a))
    return c, d_c, grads


def initial_checkpoint(manifest: DatasetManifest, cfg: TrainConfig) -> Checkpoint:
    """Freshly initialised heads; the two heads get independent seeds."""
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    hidden = list(cfg.hidden_dims)
    dims_a = [manifest.audio_features.shape[1], *hidden, cfg.embed_dim]
    dims_c = [manifest.caption_features.shape[1], *hidden, cfg.embed_dim]
    return Checkpoint(init_params(dims_a, int(seeds[0])), init_params(dims_c, int(seeds[1])))


def _fit(manifest: DatasetManifest, cfg: TrainConfig, init: Checkpoint, teachers, on_step=None):
    n_batches = len(make_epoch_batches(manifest, "train", cfg.batch_size, cfg.seed, 0))
    if n_batches == 0:
        raise DataError("training split yields no batch with at least two pairs")
    schedule = replace(cfg.schedule, steps_per_epoch=n_batches)
    audio, caption = init.audio.copy(), init.caption.copy()
    n_a = len(audio.arrays())
    state = AdamState.zeros_like(audio.arrays() + caption.arrays())
    xa_all, xc_all = manifest.audio_features, manifest.caption_features

    history = TrainHistory()
    best, best_map = None, -np.inf
    for epoch in range(schedule.epochs):
        losses = []
        lr = None
        for b, batch in enumerate(make_epoch_batches(manifest, "train", cfg.batch_size, cfg.seed, epoch)):
            step = epoch * n_batches + b
            lr = lr_at(step, schedule)
            xa, xc = xa_all[batch[:, 0]], xc_all[batch[:, 1]]
            try:
                if teachers:
                    c_teacher = teacher_batch_agreements(teachers, xa, xc)
                    targets = combined_targets(c_teacher, cfg.loss)
                else:
                    targets = identity_targets(len(batch))
                c, d_c, grads = batch_gradients(audio, caption, xa, xc, targets, cfg.loss)
                if teachers:
                    loss = combined_loss(c, c_teacher, cfg.loss)
                else:
                    loss = supervised_loss(c, cfg.loss)
                if not np.isfinite(loss):
                    raise NumericError(f"loss is {loss}")
                params, state = adam_step(audio.arrays() + caption.arrays(), grads, state, lr)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch + 1}, step {b}: {exc}") from exc
            if on_step is not None:
                on_step(epoch=epoch, step=step, loss=loss, agreements=c,
                        teacher_agreements=c_teacher if teachers else None, grad_agreements=d_c)
            audio, caption = audio.with_arrays(params[:n_a]), caption.with_arrays(params[n_a:])
            losses.append(loss)

        current = Checkpoint(audio, caption)
        val_map = evaluate_retrieval(current, manifest, cfg.validation_split).map_at_10
        mean_loss = float(np.mean(losses))
        history.add(epoch + 1, mean_loss, val_map, lr)
        log.info("epoch %d loss %.5f val mAP@10 %.4f lr %.3g", epoch + 1, mean_loss, val_map, lr)
        if val_map > best_map:
            best_map = val_map
            best = Checkpoint(
                audio.copy(),
                caption.copy(),
                {
                    "stage": cfg.stage,
                    "seed": cfg.seed,
                    "tau": cfg.loss.tau,
                    "lambda": cfg.loss.lam,
                    "epoch": epoch + 1,
                    "val_map_at_10": val_map,
                    "num_teachers": len(teachers),
                },
            )
    return best, history


def train_stage1(manifest: DatasetManifest, cfg: TrainConfig, init: Checkpoint | None = None, on_step=None):
    """Contrastive training with identity targets.

    ``init`` continues from existing parameters instead of a fresh
    initialisation. ``on_step`` is called after every optimizer step with
    keyword arguments ``epoch, step, loss, agreements, teacher_agreements,
    grad_agreements``. Returns the best checkpoint by validation mAP@10 (ties
    keep the earlier epoch) and the per-epoch history.
    """
    if cfg.stage != 1:
        raise ConfigError(f"train_stage1 needs stage 1, got {cfg.stage}")
    if init is None:
        init = initial_checkpoint(manifest, cfg)
    return _fit(manifest, cfg, init, [], on_step)


def load_teachers(paths) -> list[Checkpoint]:
    return [read_checkpoint(p) for p in paths]


def train_stage2(manifest: DatasetManifest, cfg: TrainConfig, init: Checkpoint, teachers=None, on_step=None):
    """Fine-tune ``init`` against ensembled teacher targets.

    ``teachers`` defaults to the checkpoints named in
    ``cfg.teacher_checkpoint_paths``. They are never modified.
    """
    if cfg.stage != 2:
        raise ConfigError(f"train_stage2 needs stage 2, got {cfg.stage}")
    if teachers is None:
        teachers = load_teachers(cfg.teacher_checkpoint_paths)
    if not teachers:
        raise ConfigError("stage 2 needs at least one teacher")
    for k, t in enumerate(teachers):
        _check_teacher(t, manifest, k)
    if init.audio.layer_dims[0] != manifest.audio_features.shape[1] or (
        init.caption.layer_dims[0] != manifest.caption_features.shape[1]
    ):
        raise ConfigError("initial checkpoint does not match the feature dimensions")
    return _fit(manifest, cfg, init, list(teachers), on_step)
