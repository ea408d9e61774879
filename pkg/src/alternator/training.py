"""Composite training objective, Adam, cosine annealing, and the train loop.

The objective is the alternation-reconstruction loss plus a weighted
noise-matching loss,

    L = (1/B) sum_b sum_t [ ||z_t - mu_z||^2 + w ||x_t - mu_x||^2 ]
        + lambda * (1/B) sum_b sum_t [ ||eps_z - pred_z||^2
                                       + gamma_t ||eps_x - pred_x||^2 ]

with w = (d_z sigma_z^2)/(d_x sigma_x^2) and
gamma_t = (d_z sigma_z^2 alpha_t)/(d_x sigma_x^2 beta_t).

Latents are rolled out per batch (z_0 standard normal, z_t sampled from the
model); observations feed the rollout from the training data by default
(teacher forcing), or from the model's own samples under ``free_running``.
Noise-matching targets come in two flavors: ``trajectory`` matches the
noise that actually produced the rollout (the injected latent noise, and
the residual (x - mu_x)/sigma_x implied by the observation), while
``literal`` draws fresh standard normals as targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .core import AlternatorModel, mean_x_components, mean_z_components
from .data import SeriesDataset
from .errors import ConfigError, NumericError, ShapeError

TRAJECTORY = "trajectory"
LITERAL = "literal"


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    epochs: int = 100
    batch_size: int = 100
    noise_weight: float = 0.1      # lambda on the noise-matching loss
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    noise_target_mode: str = TRAJECTORY
    free_running: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.noise_weight < 0:
            raise ConfigError("noise_weight must be >= 0")
        if self.lr_min > self.lr_max:
            raise ConfigError("lr_min must not exceed lr_max")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.noise_target_mode not in (TRAJECTORY, LITERAL):
            raise ConfigError(f"unknown noise_target_mode: {self.noise_target_mode!r}")


@dataclass
class LossBreakdown:
    """Per-batch loss terms; total = alt_z + alt_x + lambda*(nm_z + nm_x)."""

    total: float
    alt_z: float
    alt_x: float
    nm_z: float
    nm_x: float

    def as_dict(self) -> dict[str, float]:
        return {
            "total": self.total, "alt_z": self.alt_z, "alt_x": self.alt_x,
            "nm_z": self.nm_z, "nm_x": self.nm_x,
        }


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: LossBreakdown


def gamma_weight(
    d_x: int, d_z: int, sigma_x: float, sigma_z: float, alpha_t: float, beta_t: float
) -> float:
    """Balance factor between the two noise-matching terms."""
    if d_x < 1 or d_z < 1:
        raise ConfigError("dimensions must be >= 1")
    if sigma_x <= 0.0:
        raise ConfigError("sigma_x must be positive")
    if beta_t == 0.0:
        raise NumericError("gamma weight undefined at beta_t = 0")
    return (d_z * sigma_z**2 * alpha_t) / (d_x * sigma_x**2 * beta_t)


@dataclass
class RolloutNoise:
    """All randomness one rollout consumes, drawn up front."""

    z0: np.ndarray                       # (B, d_z)
    eps_z: np.ndarray                    # (B, T, d_z)
    eps_x: "np.ndarray | None" = None    # (B, T, d_x), free-running only
    literal_z: "np.ndarray | None" = None
    literal_x: "np.ndarray | None" = None


def draw_rollout_noise(
    rng: np.random.Generator,
    batch: int,
    T: int,
    d_x: int,
    d_z: int,
    mode: str = TRAJECTORY,
    free_running: bool = False,
) -> RolloutNoise:
    noise = RolloutNoise(
        z0=rng.standard_normal((batch, d_z)),
        eps_z=rng.standard_normal((batch, T, d_z)),
    )
    if free_running:
        noise.eps_x = rng.standard_normal((batch, T, d_x))
    if mode == LITERAL:
        noise.literal_z = rng.standard_normal((batch, T, d_z))
        noise.literal_x = rng.standard_normal((batch, T, d_x))
    return noise


@dataclass
class Rollout:
    """Graph-connected tensors from one training rollout."""

    x_used: list[Tensor]                 # observation fed to the latent update
    zs: list[Tensor]                     # z_t, t = 1..T
    mu_xs: list[Tensor]
    mu_zs: list[Tensor]
    pred_x: "list[Tensor | None]"        # obs-noise predictions (None if unused)
    pred_z: "list[Tensor | None]"
    noise: RolloutNoise


def rollout(
    model: AlternatorModel,
    batch: np.ndarray,
    noise: RolloutNoise,
    free_running: bool = False,
    want_noise_preds: bool = True,
) -> Rollout:
    """Run the alternation over a (B, T, d_x) batch.

    Teacher forcing (default) feeds each data observation into the latent
    update; mu_x is still computed for the loss. ``free_running`` instead
    propagates the model's own sampled observation, the literal generative
    recursion.
    """
    B, T, d_x = batch.shape
    if d_x != model.d_x:
        raise ShapeError(f"batch channel dim {d_x} != model d_x {model.d_x}")
    if T > model.schedule.T:
        raise ConfigError(f"sequence length {T} exceeds schedule length {model.schedule.T}")
    sigma_x = model.schedule.sigma_x
    sigma_z = model.schedule.sigma_z
    out = Rollout([], [], [], [], [], [], noise)
    z_prev = Tensor(noise.z0)
    for t in range(1, T + 1):
        mu_x, p_x = mean_x_components(model, z_prev, t, want_noise_pred=want_noise_preds)
        if free_running:
            x_used = ad.shift(mu_x, sigma_x * noise.eps_x[:, t - 1])
        else:
            x_used = Tensor(batch[:, t - 1])
        mu_z, p_z = mean_z_components(model, z_prev, x_used, t, want_noise_pred=want_noise_preds)
        z_t = ad.shift(mu_z, sigma_z * noise.eps_z[:, t - 1])
        out.x_used.append(x_used)
        out.zs.append(z_t)
        out.mu_xs.append(mu_x)
        out.mu_zs.append(mu_z)
        out.pred_x.append(p_x)
        out.pred_z.append(p_z)
        z_prev = z_t
    return out


def _batch_size(r: Rollout) -> int:
    return r.zs[0].data.shape[0]


def alternator_loss(model: AlternatorModel, r: Rollout) -> tuple[Tensor, Tensor]:
    """(latent term, weighted observation term), each averaged over the batch."""
    s = model.schedule
    if s.sigma_x <= 0.0:
        raise ConfigError("sigma_x must be positive for the observation weight")
    w = (model.d_z * s.sigma_z**2) / (model.d_x * s.sigma_x**2)
    B = _batch_size(r)
    z_sum = None
    x_sum = None
    for z_t, mu_z, x_t, mu_x in zip(r.zs, r.mu_zs, r.x_used, r.mu_xs):
        zt = ad.total_sum(ad.square(ad.sub(z_t, mu_z)))
        xt = ad.total_sum(ad.square(ad.sub(x_t, mu_x)))
        z_sum = zt if z_sum is None else ad.add(z_sum, zt)
        x_sum = xt if x_sum is None else ad.add(x_sum, xt)
    return ad.scale(z_sum, 1.0 / B), ad.scale(x_sum, w / B)


def noise_matching_loss(
    model: AlternatorModel, r: Rollout, mode: str = TRAJECTORY
) -> tuple[Tensor, Tensor]:
    """(latent, gamma-weighted observation) noise-matching terms.

    ``trajectory`` targets are the injected latent noise and the residual
    (x - mu_x)/sigma_x; ``literal`` targets are fresh standard normals.
    Steps with beta_t = 0 contribute no observation term (gamma treated as
    zero rather than dividing by zero).
    """
    if mode not in (TRAJECTORY, LITERAL):
        raise ConfigError(f"unknown noise-matching mode: {mode!r}")
    if any(p is None for p in r.pred_z):
        raise ConfigError("rollout was built without noise predictions")
    s = model.schedule
    B = _batch_size(r)
    T = len(r.zs)
    z_sum = None
    x_sum = None
    for i in range(T):
        t = i + 1
        if mode == TRAJECTORY:
            target_z = Tensor(r.noise.eps_z[:, i])
            target_x = ad.scale(ad.sub(r.x_used[i], r.mu_xs[i]), 1.0 / s.sigma_x)
        else:
            target_z = Tensor(r.noise.literal_z[:, i])
            target_x = Tensor(r.noise.literal_x[:, i])
        zt = ad.total_sum(ad.square(ad.sub(target_z, r.pred_z[i])))
        z_sum = zt if z_sum is None else ad.add(z_sum, zt)
        beta_t = float(s.beta[i])
        if beta_t == 0.0:
            continue
        g = gamma_weight(model.d_x, model.d_z, s.sigma_x, s.sigma_z, float(s.alpha[i]), beta_t)
        if g == 0.0:
            continue
        xt = ad.scale(ad.total_sum(ad.square(ad.sub(target_x, r.pred_x[i]))), g)
        x_sum = xt if x_sum is None else ad.add(x_sum, xt)
    if x_sum is None:
        x_sum = Tensor(0.0)
    return ad.scale(z_sum, 1.0 / B), ad.scale(x_sum, 1.0 / B)


def total_loss(
    model: AlternatorModel,
    batch: np.ndarray,
    config: TrainConfig,
    noise: RolloutNoise,
) -> tuple[Tensor, LossBreakdown]:
    """Composite objective on one batch; returns the graph node and floats."""
    lam = config.noise_weight
    try:
        r = rollout(model, batch, noise, free_running=config.free_running,
                    want_noise_preds=lam > 0.0)
    except NumericError as exc:
        raise NumericError(f"rollout: {exc}") from exc
    try:
        alt_z, alt_x = alternator_loss(model, r)
    except NumericError as exc:
        raise NumericError(f"alternator term: {exc}") from exc
    loss = ad.add(alt_z, alt_x)
    if lam > 0.0:
        try:
            nm_z, nm_x = noise_matching_loss(model, r, config.noise_target_mode)
        except NumericError as exc:
            raise NumericError(f"noise-matching term: {exc}") from exc
        loss = ad.add(loss, ad.scale(ad.add(nm_z, nm_x), lam))
        nm_z_val, nm_x_val = nm_z.item(), nm_x.item()
    else:
        nm_z_val = nm_x_val = 0.0
    breakdown = LossBreakdown(
        total=loss.item(), alt_z=alt_z.item(), alt_x=alt_x.item(),
        nm_z=nm_z_val, nm_x=nm_x_val,
    )
    return loss, breakdown


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, Tensor], AdamState]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({name})")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max (epoch 0) down to lr_min (epoch = total)."""
    if total_epochs <= 0:
        raise ConfigError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * epoch / total_epochs))


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))


def train(
    model: AlternatorModel,
    dataset: SeriesDataset,
    config: TrainConfig,
    log_fn: "Callable[[EpochStats], None] | None" = None,
) -> tuple[AlternatorModel, list[EpochStats]]:
    """Optimize all four networks; returns the model and per-epoch history.

    Sequences are reshuffled every epoch with an epoch-indexed seeded RNG
    (the final short batch is kept), one latent rollout is drawn per
    sequence per epoch, and updates use Adam with cosine-annealed learning
    rate. Deterministic: same config and seed give an identical history.
    """
    data = dataset.data
    if data.shape[0] == 0:
        raise ConfigError("training dataset is empty")
    N, T, _ = data.shape
    params = model.named_parameters()
    state = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
    history: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        rng = _epoch_rng(config.seed, epoch)
        lr = cosine_lr(epoch - 1, config.epochs, config.lr_max, config.lr_min)
        perm = rng.permutation(N)
        sums = np.zeros(5)
        for start in range(0, N, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = data[idx]
            noise = draw_rollout_noise(
                rng, len(idx), T, model.d_x, model.d_z,
                mode=config.noise_target_mode, free_running=config.free_running,
            )
            try:
                with Tape() as tape:
                    loss, breakdown = total_loss(model, batch, config, noise)
                grads = backward(tape, loss)
            except NumericError as exc:
                raise NumericError(f"training aborted at epoch {epoch}: {exc}") from exc
            named_grads = {name: grads.of(p) for name, p in params.items()}
            adam_step(params, named_grads, state, lr)
            sums += len(idx) * np.array([
                breakdown.total, breakdown.alt_z, breakdown.alt_x,
                breakdown.nm_z, breakdown.nm_x,
            ])
        avg = sums / N
        stats = EpochStats(epoch=epoch, lr=float(lr),
                           loss=LossBreakdown(*[float(v) for v in avg]))
        history.append(stats)
        if log_fn is not None:
            log_fn(stats)
    return model, history
