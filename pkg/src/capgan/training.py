"""Training procedures: MLE pretraining of the generator, discriminator
and semantic-evaluator pretraining, and the adversarial loop with the
self-critical policy-gradient generator update.

The generator's adversarial reward mixes three signals per complete
caption: the discriminator's naturalness probability n, the semantic
evaluator's cosine s, and the CIDEr score c, combined as
``lam * (n + s) + (1 - lam) * c``. The greedy rollout's reward serves as
the baseline, so only sampled captions that beat greedy decoding push
their token probabilities up.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DatasetSplit, epoch_batches
from .decoding import rollout
from .metrics import DocFreqTable, build_doc_freq, cider
from .models import Discriminator, Generator, SemanticEvaluator, save_checkpoint
from .seeding import substream
from .tensor import Adam, Tensor, cross_entropy


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.5
    mle_epochs: int = 25
    d_pretrain_epochs: int = 5
    se_pretrain_epochs: int = 25
    adversarial_epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    t_max: int = 22
    se_margin: float = 0.2
    normalize_cider: bool = False  # divide c by 10 before mixing; off per the stated reward
    ablation: str | None = None  # nd | se | le

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.ablation not in (None, "nd", "se", "le"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        # single-judge ablations pin lam so the reward is exactly one term
        if self.ablation in ("nd", "se"):
            self.lam = 1.0
        elif self.ablation == "le":
            self.lam = 0.0


@dataclass
class RewardBreakdown:
    n: float  # discriminator naturalness
    s: float  # semantic cosine
    c: float  # CIDEr
    lam: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.lam * (self.n + self.s) + (1.0 - self.lam) * self.c


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, **record) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epoch index must be strictly increasing")
        self.records.append(record)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def save_reward_csv(self, path) -> None:
        keys = ["epoch", "mean_n", "mean_s", "mean_c", "mean_reward"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for record in self.records:
                writer.writerow([record.get(k, "") for k in keys])


class RewardOracles:
    """Scores complete captions; counts queries so degenerate modes can
    prove they never touched a frozen judge."""

    def __init__(self, discriminator, evaluator, df_table: DocFreqTable, vocab):
        self.discriminator = discriminator
        self.evaluator = evaluator
        self.df_table = df_table
        self.vocab = vocab
        self.d_queries = 0
        self.se_queries = 0

    def score(self, seq: list[int], record, config: TrainConfig) -> RewardBreakdown:
        lam = config.lam
        use_d = lam > 0.0 and config.ablation != "se"
        use_se = lam > 0.0 and config.ablation != "nd"
        n = s = 0.0
        if use_d:
            self.d_queries += 1
            n = self.discriminator.score(seq)
        if use_se:
            self.se_queries += 1
            s = self.evaluator.score(record.features, seq)
        c = 0.0
        if lam < 1.0:
            words = self.vocab.decode(seq)
            c = cider(words, record.references, self.df_table)
            if config.normalize_cider:
                c /= 10.0
        return RewardBreakdown(n=n, s=s, c=c, lam=lam)


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite ({value})")
    return value


# -- MLE pretraining ----------------------------------------------------------


def _eval_greedy_cider(gen, split: DatasetSplit, vocab, df_table, t_max: int) -> float:
    scores = []
    for record in split.records:
        z = np.zeros((1, gen.config.noise_dim))
        seqs, _ = rollout(
            gen, record.features[None], np.array([record.features.shape[0]]),
            z, "greedy", max_length=t_max,
        )
        scores.append(cider(vocab.decode(seqs[0]), record.references, df_table))
    return float(np.mean(scores))


def mle_pretrain(
    gen: Generator,
    train_split: DatasetSplit,
    eval_split: DatasetSplit | None,
    vocab,
    config: TrainConfig,
    out_dir=None,
    start_epoch: int = 1,
) -> TrainLog:
    """Teacher-forced cross-entropy training; noise held at zero."""
    opt = Adam(gen.store.tensors(), lr=config.learning_rate)
    data_rng = substream(config.seed, "mle-data")
    drop_rng = substream(config.seed, "mle-dropout")
    log = TrainLog()
    df_table = build_doc_freq([r.references for r in train_split.records])
    best_cider = -1.0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, config.mle_epochs + 1):
        losses = []
        for batch in epoch_batches(train_split, vocab, config.batch_size, data_rng,
                                   t_max=config.t_max):
            z = np.zeros((len(batch.clip_ids), gen.config.noise_dim))
            logits = gen.forward(
                batch.features, batch.feature_lengths, z,
                batch.targets[:, :-1], drop_rng=drop_rng,
            )
            loss = cross_entropy(logits, batch.targets[:, 1:], batch.mask)
            _check_finite(loss.item(), "MLE loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        record = {"epoch": epoch, "mle_loss": float(np.mean(losses))}
        if eval_split is not None and eval_split.records:
            record["eval_cider"] = _eval_greedy_cider(
                gen, eval_split, vocab, df_table, config.t_max
            )
        log.append(**record)
        if out_dir is not None:
            save_checkpoint(out_dir / "generator_mle_final.ckpt", gen,
                            {"epoch": epoch, "seed": config.seed, "stage": "mle"})
            if record.get("eval_cider", 0.0) >= best_cider:
                best_cider = record.get("eval_cider", 0.0)
                save_checkpoint(out_dir / "generator_mle_best.ckpt", gen,
                                {"epoch": epoch, "seed": config.seed, "stage": "mle"})
    return log


# -- discriminator ------------------------------------------------------------


def discriminator_loss(d: Discriminator, real_tokens, real_lengths,
                       fake_tokens, fake_lengths) -> Tensor:
    """Negated adversarial objective: -E log D(real) - E log(1 - D(fake))."""
    eps = 1e-12
    real = d.forward(real_tokens, real_lengths)
    fake = d.forward(fake_tokens, fake_lengths)
    loss_real = -(real + eps).log().mean()
    loss_fake = -((1.0 - fake) + eps).log().mean()
    return loss_real + loss_fake


def _pad_sequences(seqs: list[list[int]], width: int | None = None):
    width = width or max(len(s) for s in seqs)
    tokens = np.zeros((len(seqs), width), dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, seq in enumerate(seqs):
        seq = seq[:width]
        tokens[i, : len(seq)] = seq
        lengths[i] = len(seq)
    return tokens, lengths


def _sample_fakes(gen: Generator, batch, rng, t_max: int) -> list[list[int]]:
    z = rng.standard_normal((len(batch.clip_ids), gen.config.noise_dim))
    seqs, _ = rollout(
        gen, batch.features, batch.feature_lengths, z, "sample",
        rng=rng, max_length=t_max,
    )
    return seqs


def discriminator_step(d, opt: Adam, real_tokens, real_lengths,
                       fake_tokens, fake_lengths) -> float:
    loss = discriminator_loss(d, real_tokens, real_lengths, fake_tokens, fake_lengths)
    _check_finite(loss.item(), "discriminator loss")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return loss.item()


def d_pretrain(
    d: Discriminator,
    gen: Generator,
    train_split: DatasetSplit,
    vocab,
    config: TrainConfig,
    start_epoch: int = 1,
) -> TrainLog:
    """Real references vs. captions sampled from the current generator."""
    opt = Adam(d.store.tensors(), lr=config.learning_rate)
    data_rng = substream(config.seed, "d-data")
    fake_rng = substream(config.seed, "d-fakes")
    log = TrainLog()
    for epoch in range(start_epoch, config.d_pretrain_epochs + 1):
        losses = []
        for batch in epoch_batches(train_split, vocab, config.batch_size, data_rng,
                                   t_max=config.t_max):
            real_tokens = batch.targets
            real_lengths = batch.target_lengths
            fakes = _sample_fakes(gen, batch, fake_rng, config.t_max)
            fake_tokens, fake_lengths = _pad_sequences(fakes)
            losses.append(
                discriminator_step(d, opt, real_tokens, real_lengths,
                                   fake_tokens, fake_lengths)
            )
        log.append(epoch=epoch, d_loss=float(np.mean(losses)))
    return log


def discriminator_accuracy(d, real_seqs, fake_seqs) -> float:
    real_tokens, real_lengths = _pad_sequences(real_seqs)
    fake_tokens, fake_lengths = _pad_sequences(fake_seqs)
    real = d.forward(real_tokens, real_lengths).data
    fake = d.forward(fake_tokens, fake_lengths).data
    correct = (real > 0.5).sum() + (fake <= 0.5).sum()
    return float(correct / (len(real_seqs) + len(fake_seqs)))


# -- semantic evaluator -------------------------------------------------------


def semantic_hinge_loss(se: SemanticEvaluator, batch, margin: float) -> Tensor:
    """Bidirectional in-batch ranking loss over the pairwise cosine matrix."""
    b = len(batch.clip_ids)
    audio = se.embed_audio(batch.features, batch.feature_lengths)
    caption = se.embed_caption(batch.targets, batch.target_lengths)
    sims = audio @ caption.transpose()  # [B, B], diagonal holds the true pairs
    idx = np.arange(b)
    pos = sims[idx, idx]
    off_diag = Tensor(1.0 - np.eye(b, dtype=audio.dtype))
    pos_col = pos.reshape(b, 1).broadcast_to((b, b))
    pos_row = pos.reshape(1, b).broadcast_to((b, b))
    audio_anchored = ((sims - pos_col + margin).relu() * off_diag).sum()
    caption_anchored = ((sims - pos_row + margin).relu() * off_diag).sum()
    denom = max(1, b * (b - 1))
    return (audio_anchored + caption_anchored) * (1.0 / denom)


def semantic_pretrain(
    se: SemanticEvaluator,
    train_split: DatasetSplit,
    vocab,
    config: TrainConfig,
    start_epoch: int = 1,
) -> TrainLog:
    opt = Adam(se.store.tensors(), lr=config.learning_rate)
    data_rng = substream(config.seed, "se-data")
    log = TrainLog()
    for epoch in range(start_epoch, config.se_pretrain_epochs + 1):
        losses = []
        for batch in epoch_batches(train_split, vocab, config.batch_size, data_rng,
                                   t_max=config.t_max):
            if len(batch.clip_ids) < 2:
                continue  # hinge loss needs in-batch negatives
            loss = semantic_hinge_loss(se, batch, config.se_margin)
            _check_finite(loss.item(), "semantic loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.append(epoch=epoch, se_loss=float(np.mean(losses)) if losses else 0.0)
    return log


def semantic_gap(se: SemanticEvaluator, split: DatasetSplit, vocab,
                 t_max: int = 22) -> float:
    """Mean paired-minus-unpaired cosine over a split (unpaired = shifted)."""
    feats = []
    feat_lengths = []
    token_rows = []
    for record in split.records:
        feats.append(record.features)
        feat_lengths.append(record.features.shape[0])
        token_rows.append(vocab.encode(record.references[0][:t_max]))
    f_max = max(feat_lengths)
    features = np.zeros((len(feats), f_max, feats[0].shape[1]), dtype=np.float32)
    for i, f in enumerate(feats):
        features[i, : f.shape[0]] = f
    tokens, lengths = _pad_sequences(token_rows)
    paired = se.scores(features, np.array(feat_lengths), tokens, lengths).data
    rolled = np.roll(np.arange(len(feats)), 1)
    unpaired = se.scores(
        features, np.array(feat_lengths), tokens[rolled], lengths[rolled]
    ).data
    return float(paired.mean() - unpaired.mean())


# -- SCST ---------------------------------------------------------------------


def compute_reward(seq, record, oracles: RewardOracles, config: TrainConfig) -> RewardBreakdown:
    """Reward of one complete caption (sequence includes sos/eos markers)."""
    return oracles.score(seq, record, config)


def scst_surrogate_loss(gen: Generator, batch, z: np.ndarray,
                        sampled: list[list[int]], advantages: np.ndarray,
                        t_max: int) -> Tensor:
    """-(1/B) sum_b adv_b * sum_t log pi(w_t); advantages held constant."""
    tokens, lengths = _pad_sequences(sampled, width=t_max + 2)
    inputs = tokens[:, :-1]
    targets = tokens[:, 1:]
    mask = (np.arange(targets.shape[1])[None, :] < (lengths - 1)[:, None]).astype(float)
    logits = gen.forward(batch.features, batch.feature_lengths, z, inputs)
    log_probs = logits.log_softmax(axis=-1)
    onehot = np.zeros(log_probs.shape, dtype=log_probs.dtype)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    picked = (log_probs * Tensor(onehot)).sum(axis=-1)  # [B, T]
    weighted = picked * Tensor(mask * advantages[:, None])
    return -weighted.sum() * (1.0 / len(sampled))


def scst_generator_step(
    gen: Generator,
    opt: Adam,
    batch,
    records_by_id: dict,
    oracles: RewardOracles,
    config: TrainConfig,
    z_rng: np.random.Generator,
    sample_rng: np.random.Generator,
):
    """One policy-gradient update; returns (loss, reward breakdowns)."""
    z = z_rng.standard_normal((len(batch.clip_ids), gen.config.noise_dim))
    sampled, _ = rollout(
        gen, batch.features, batch.feature_lengths, z, "sample",
        rng=sample_rng, max_length=config.t_max,
    )
    greedy, _ = rollout(
        gen, batch.features, batch.feature_lengths, z, "greedy",
        max_length=config.t_max,
    )
    breakdowns = []
    advantages = np.zeros(len(sampled))
    for i, clip_id in enumerate(batch.clip_ids):
        record = records_by_id[clip_id]
        r_sampled = compute_reward(sampled[i], record, oracles, config)
        r_greedy = compute_reward(greedy[i], record, oracles, config)
        advantages[i] = r_sampled.total - r_greedy.total
        breakdowns.append(r_sampled)
    loss = scst_surrogate_loss(gen, batch, z, sampled, advantages, config.t_max)
    _check_finite(loss.item(), "SCST loss")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return loss.item(), breakdowns


# -- adversarial loop ---------------------------------------------------------


def adversarial_train(
    gen: Generator,
    d: Discriminator,
    se: SemanticEvaluator,
    train_split: DatasetSplit,
    eval_split: DatasetSplit | None,
    vocab,
    config: TrainConfig,
    out_dir=None,
) -> tuple[TrainLog, RewardOracles]:
    """Alternating one discriminator step and one generator SCST step per
    batch. The semantic evaluator stays frozen; with lam=0 the loop is
    conventional reward-only RL and the discriminator is never touched."""
    # reward CIDEr uses training references; the eval table would leak
    df_table = build_doc_freq([r.references for r in train_split.records])
    oracles = RewardOracles(d, se, df_table, vocab)
    gen_opt = Adam(gen.store.tensors(), lr=config.learning_rate)
    d_opt = Adam(d.store.tensors(), lr=config.learning_rate)
    data_rng = substream(config.seed, "adv-data")
    fake_rng = substream(config.seed, "adv-fakes")
    z_rng = substream(config.seed, "adv-z")
    sample_rng = substream(config.seed, "adv-sample")
    records_by_id = {r.clip_id: r for r in train_split.records}
    se_before = {k: v.data.copy() for k, v in se.params.items()}
    log = TrainLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    train_d = config.lam > 0.0 and config.ablation != "se"

    for epoch in range(1, config.adversarial_epochs + 1):
        d_losses, g_losses, rewards = [], [], []
        for batch in epoch_batches(train_split, vocab, config.batch_size, data_rng,
                                   t_max=config.t_max):
            if train_d:
                fakes = _sample_fakes(gen, batch, fake_rng, config.t_max)
                fake_tokens, fake_lengths = _pad_sequences(fakes)
                d_losses.append(
                    discriminator_step(d, d_opt, batch.targets, batch.target_lengths,
                                       fake_tokens, fake_lengths)
                )
            g_loss, breakdowns = scst_generator_step(
                gen, gen_opt, batch, records_by_id, oracles, config,
                z_rng, sample_rng,
            )
            g_losses.append(g_loss)
            rewards.extend(breakdowns)
        record = {
            "epoch": epoch,
            "g_loss": float(np.mean(g_losses)),
            "d_loss": float(np.mean(d_losses)) if d_losses else None,
            "mean_n": float(np.mean([r.n for r in rewards])),
            "mean_s": float(np.mean([r.s for r in rewards])),
            "mean_c": float(np.mean([r.c for r in rewards])),
            "mean_reward": float(np.mean([r.total for r in rewards])),
            "d_queries": oracles.d_queries,
            "se_queries": oracles.se_queries,
        }
        if eval_split is not None and eval_split.records:
            record["eval_cider"] = _eval_greedy_cider(
                gen, eval_split, vocab, df_table, config.t_max
            )
        log.append(**record)
        if out_dir is not None:
            save_checkpoint(out_dir / f"generator_adv_epoch{epoch:03d}.ckpt", gen,
                            {"epoch": epoch, "seed": config.seed, "stage": "adversarial"})
            save_checkpoint(out_dir / "generator_adv_final.ckpt", gen,
                            {"epoch": epoch, "seed": config.seed, "stage": "adversarial"})
            save_checkpoint(out_dir / "discriminator_adv_final.ckpt", d,
                            {"epoch": epoch, "seed": config.seed, "stage": "adversarial"})

    for name, before in se_before.items():
        if not np.array_equal(before, se.params[name].data):
            raise RuntimeError("semantic evaluator changed during adversarial training")
    return log, oracles
