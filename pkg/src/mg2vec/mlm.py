"""Masked-token pretraining of the transformer over k-mer windows.

Reads are tokenized at stride 1 and split into non-overlapping windows of
at most max_tokens ids. Each position is masked independently with
probability mask_ratio and replaced by the MASK token (always a full
substitution); when a window draws zero masks, one uniformly chosen
position is masked so the loss is defined. The embedding layer may be
initialized from the structural (graph) embeddings, and gradients flow
into it, so after training it is the contextual embedding table.
"""

from dataclasses import dataclass, field

import numpy as np

from mg2vec.embeddings import EmbeddingTable
from mg2vec.errors import DomainError, TrainingDivergedError, ValidationError
from mg2vec.kmer import tokenize
from mg2vec.optim import Adam, warmup_lr
from mg2vec.transformer import TransformerModel, mlm_loss


@dataclass(frozen=True)
class MaskingConfig:
    mask_ratio: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise DomainError("mask_ratio must be in [0, 1]")


@dataclass(frozen=True)
class PretrainSchedule:
    epochs: int = 10
    batch_size: int = 16
    warmup_steps: int = 400

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_steps < 1:
            raise DomainError("bad pretraining schedule")


def apply_mask(token_ids, masking, mask_id, rng=None, maskable=None):
    """(input ids with MASK substitutions, masked bool vector, original ids).

    Positions are masked independently with probability mask_ratio; if none
    is drawn, one maskable position is chosen uniformly. `maskable` limits
    the candidates (used to protect padding).
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.size == 0:
        raise DomainError("cannot mask an empty token list")
    if rng is None:
        rng = np.random.default_rng(masking.seed)
    if maskable is None:
        maskable = np.ones(token_ids.shape, dtype=bool)
    chosen = (rng.random(token_ids.shape) < masking.mask_ratio) & maskable
    if not chosen.any():
        candidates = np.flatnonzero(maskable)
        if candidates.size == 0:
            raise DomainError("no maskable position in window")
        chosen[candidates[rng.integers(candidates.size)]] = True
    masked_ids = token_ids.copy()
    masked_ids[chosen] = mask_id
    return masked_ids, chosen, token_ids


def windows_from_reads(reads, vocab, max_tokens, stride=1):
    """Tokenize reads and chop the id sequences into training windows."""
    windows = []
    for read in reads:
        ids = tokenize(read, vocab, stride=stride)
        for start in range(0, len(ids), max_tokens):
            chunk = ids[start:start + max_tokens]
            if chunk.size:
                windows.append(chunk)
    return windows


def _assemble_batch(windows, pad_id, masking, mask_id, rng):
    width = max(len(w) for w in windows)
    batch = np.full((len(windows), width), pad_id, dtype=np.int64)
    targets = np.full((len(windows), width), pad_id, dtype=np.int64)
    masked = np.zeros((len(windows), width), dtype=bool)
    for row, window in enumerate(windows):
        ids, chosen, original = apply_mask(window, masking, mask_id, rng=rng)
        batch[row, : len(window)] = ids
        targets[row, : len(window)] = original
        masked[row, : len(window)] = chosen
    return batch, targets, masked


@dataclass
class PretrainResult:
    model: TransformerModel
    contextual: EmbeddingTable
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)


def pretrain(reads, vocab, config, masking=MaskingConfig(),
             schedule=PretrainSchedule(), global_embeddings=None, on_epoch=None):
    """Train the masked-token objective; returns model + contextual table.

    With global_embeddings the token embedding layer starts as an exact
    copy of the structural table (checked against the vocabulary hash);
    without it the layer is randomly initialized. Deterministic per seeds.
    Aborts when the epoch loss exceeds twice the initial batch loss for
    three consecutive epochs.
    """
    windows = windows_from_reads(reads, vocab, config.max_tokens)
    if not windows:
        raise ValidationError("no read produced a non-empty token window")
    model = TransformerModel(config)
    if global_embeddings is not None:
        if global_embeddings.vectors.shape != model.params["embedding"].shape:
            raise ValidationError(
                f"structural table {global_embeddings.vectors.shape} does not fit "
                f"embedding layer {model.params['embedding'].shape}"
            )
        if global_embeddings.vocab_hash and global_embeddings.vocab_hash != vocab.content_hash():
            raise ValidationError("structural table built for a different vocabulary")
        model.params["embedding"][:] = global_embeddings.vectors

    optimizer = Adam(model.params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    mask_rng = np.random.default_rng([masking.seed, 3])
    step = 0
    initial_loss = None
    epoch_losses = []
    bad_epochs = 0
    for epoch in range(schedule.epochs):
        order = shuffle_rng.permutation(len(windows))
        batch_losses = []
        for lo in range(0, len(order), schedule.batch_size):
            chunk = [windows[i] for i in order[lo:lo + schedule.batch_size]]
            ids, targets, masked = _assemble_batch(
                chunk, config.pad_id, masking, vocab.mask_id, mask_rng
            )
            _, logits, cache = model.forward(ids, train=True, dropout_rng=dropout_rng)
            loss, dlogits = mlm_loss(logits, targets, masked)
            if initial_loss is None:
                initial_loss = loss
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"masked-token loss became non-finite at step {step}"
                )
            grads = model.backward(cache, dlogits)
            step += 1
            optimizer.step(grads, warmup_lr(step, config.model_dim, schedule.warmup_steps))
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        epoch_losses.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        bad_epochs = bad_epochs + 1 if epoch_loss > 2.0 * initial_loss else 0
        if bad_epochs >= 3:
            raise TrainingDivergedError(
                f"epoch loss {epoch_loss:.4f} above twice the initial "
                f"{initial_loss:.4f} for 3 consecutive epochs"
            )
    if initial_loss is None:  # epochs == 0: loss of the first would-be batch
        ids, targets, masked = _assemble_batch(
            windows[: schedule.batch_size], config.pad_id, masking, vocab.mask_id, mask_rng
        )
        _, logits, _ = model.forward(ids)
        initial_loss, _ = mlm_loss(logits, targets, masked)
    contextual = EmbeddingTable(
        vectors=model.params["embedding"].copy(), vocab_hash=vocab.content_hash()
    )
    return PretrainResult(
        model=model, contextual=contextual,
        initial_loss=float(initial_loss), epoch_losses=epoch_losses,
    )


def masked_accuracy(model, windows, vocab, masking, seed=0):
    """Fraction of masked positions whose argmax prediction is the original."""
    rng = np.random.default_rng(seed)
    hits = 0
    total = 0
    for window in windows:
        ids, chosen, original = apply_mask(window, masking, vocab.mask_id, rng=rng)
        _, logits, _ = model.forward(ids[None, :])
        pred = logits[0].argmax(axis=1)
        hits += int((pred[chosen] == original[chosen]).sum())
        total += int(chosen.sum())
    if total == 0:
        raise DomainError("no masked positions")
    return hits / total
