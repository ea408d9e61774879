"""Noise schedules, the alternating generative process, encoding, checkpoints.

The model alternates between producing an observation from the previous
latent state and updating the latent state from that observation:

    x_t = sqrt(beta_t) * obs_net(z_{t-1})
          + sqrt(1 - beta_t - sigma_x^2) * obs_noise_net(z_{t-1})
          + sigma_x * eps_x
    z_t = sqrt(alpha_t) * lat_net(x_t)
          + sqrt(1 - alpha_t - sigma_z^2) * lat_noise_net([z_{t-1}; x_t])
          + sigma_z * eps_z

The schedule coefficients interpolate between mean-driven dynamics and the
learned noise models. At the boundary beta_t = 1 - sigma_x^2 (and alpha_t
analogously) the noise-model coefficient is exactly zero -- its square is
computed as ``(1 - sigma^2) - beta_t`` so the cancellation is bitwise exact
-- and the dynamics degenerate to the classic two-network alternation.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError
from .networks import (
    MLP,
    SELF_ATTENTION,
    Network,
    NetworkSpec,
    ParameterSet,
    init_parameters,
)

NOISE_MODEL_DYNAMICS = "noise_models"
VANILLA_DYNAMICS = "vanilla"

_NET_ORDER = ("obs_net", "lat_net", "obs_noise_net", "lat_noise_net")


@dataclass
class NoiseSchedule:
    """Per-timestep coefficients plus base noise scales.

    Admissible iff 0 <= beta_t <= 1 - sigma_x^2 and 0 <= alpha_t <= 1 -
    sigma_z^2 for every t (so every square root in the sampling rules is
    real), with both sigmas in (0, 1). The upper boundary is admitted: there
    the noise-model coefficient is exactly zero.
    """

    beta: np.ndarray
    alpha: np.ndarray
    sigma_x: float
    sigma_z: float

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.beta.shape != self.alpha.shape or self.beta.ndim != 1:
            raise ConfigError("beta and alpha must be 1-D and of equal length")

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def beta_limit(self) -> float:
        return 1.0 - self.sigma_x**2

    @property
    def alpha_limit(self) -> float:
        return 1.0 - self.sigma_z**2

    def coef_x(self, t: int) -> tuple[float, float]:
        """(sqrt(beta_t), sqrt(1 - beta_t - sigma_x^2)) for 1-based t."""
        b = float(self.beta[t - 1])
        c2 = self.beta_limit - b
        if b < 0.0 or c2 < 0.0:
            raise ConfigError(f"schedule violates beta bounds at t={t}: beta={b}")
        return np.sqrt(b), np.sqrt(c2)

    def coef_z(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_t), sqrt(1 - alpha_t - sigma_z^2)) for 1-based t."""
        a = float(self.alpha[t - 1])
        c2 = self.alpha_limit - a
        if a < 0.0 or c2 < 0.0:
            raise ConfigError(f"schedule violates alpha bounds at t={t}: alpha={a}")
        return np.sqrt(a), np.sqrt(c2)


@dataclass
class ScheduleReport:
    ok: bool
    violations: list[tuple[int, str]] = field(default_factory=list)


def linear_schedule(T: int, lo: float, hi: float) -> np.ndarray:
    """T evenly spaced coefficients from lo to hi inclusive; T=1 gives [lo]."""
    if T < 1:
        raise ConfigError("schedule length must be >= 1")
    if lo > hi:
        raise ConfigError(f"schedule endpoints out of order: lo={lo} > hi={hi}")
    if lo < 0.0:
        raise ConfigError("schedule coefficients must be non-negative")
    if T == 1:
        return np.array([lo], dtype=np.float64)
    return np.linspace(lo, hi, T)


def default_schedule(
    T: int,
    sigma_x: float,
    sigma_z: float,
    beta_span: tuple[float, float] = (0.1, 1.0),
    alpha_span: tuple[float, float] = (0.1, 1.0),
) -> NoiseSchedule:
    """Linearly spaced schedules spanning fractions of the admissible range.

    The default runs from 0.1 * (1 - sigma^2) up to the boundary
    1 - sigma^2 itself, so the final step degenerates to the classic
    alternation.
    """
    bmax = 1.0 - sigma_x**2
    amax = 1.0 - sigma_z**2
    beta = linear_schedule(T, beta_span[0] * bmax, beta_span[1] * bmax)
    alpha = linear_schedule(T, alpha_span[0] * amax, alpha_span[1] * amax)
    return NoiseSchedule(beta=beta, alpha=alpha, sigma_x=sigma_x, sigma_z=sigma_z)


def vanilla_schedule(T: int, sigma_x: float, sigma_z: float) -> NoiseSchedule:
    """Boundary schedule: both noise-model coefficients are exactly zero."""
    if not (0.0 < sigma_x < 1.0 and 0.0 < sigma_z < 1.0):
        raise ConfigError("sigma_x and sigma_z must lie in (0, 1)")
    beta = np.full(T, 1.0 - sigma_x**2)
    alpha = np.full(T, 1.0 - sigma_z**2)
    return NoiseSchedule(beta=beta, alpha=alpha, sigma_x=sigma_x, sigma_z=sigma_z)


def validate_schedule(s: NoiseSchedule) -> ScheduleReport:
    """Check every admissibility bound; violations are returned, not raised.

    Schedule-level problems (sigma out of range) are reported with t=0.
    """
    violations: list[tuple[int, str]] = []
    if not (0.0 < s.sigma_x and s.sigma_x**2 < 1.0):
        violations.append((0, "sigma_x"))
    if not (0.0 < s.sigma_z and s.sigma_z**2 < 1.0):
        violations.append((0, "sigma_z"))
    for t in range(1, s.T + 1):
        b = s.beta[t - 1]
        a = s.alpha[t - 1]
        if b < 0.0 or s.beta_limit - b < 0.0:
            violations.append((t, "beta"))
        if a < 0.0 or s.alpha_limit - a < 0.0:
            violations.append((t, "alpha"))
    return ScheduleReport(ok=not violations, violations=violations)


@dataclass
class AlternatorModel:
    """The four networks plus the schedule; immutable after construction.

    obs_net       maps latent -> observation-space mean driver
    lat_net       maps observation -> latent-space mean driver
    obs_noise_net predicts structured observation noise from the latent
    lat_noise_net predicts structured latent noise from [latent; observation]

    ``dynamics`` selects the sampling rules: ``noise_models`` (above) or
    ``vanilla``, the classic alternation where the observation mean is
    sqrt(1 - sigma_x^2) * obs_net(z) and the latent update interpolates
    z_{t-1} directly instead of a learned noise term.
    """

    d_x: int
    d_z: int
    obs_net: Network
    lat_net: Network
    obs_noise_net: Network
    lat_noise_net: Network
    schedule: NoiseSchedule
    dynamics: str = NOISE_MODEL_DYNAMICS

    def __post_init__(self):
        if self.dynamics not in (NOISE_MODEL_DYNAMICS, VANILLA_DYNAMICS):
            raise ConfigError(f"unknown dynamics: {self.dynamics!r}")
        checks = (
            (self.obs_net, self.d_z, self.d_x),
            (self.lat_net, self.d_x, self.d_z),
            (self.obs_noise_net, self.d_z, self.d_x),
            (self.lat_noise_net, self.d_z + self.d_x, self.d_z),
        )
        for net, want_in, want_out in checks:
            if net.spec.input_dim != want_in or net.spec.output_dim != want_out:
                raise ConfigError(
                    f"network dims {net.spec.input_dim}->{net.spec.output_dim} "
                    f"inconsistent with model dims (want {want_in}->{want_out})"
                )

    def networks(self) -> dict[str, Network]:
        return {name: getattr(self, name) for name in _NET_ORDER}

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for name in _NET_ORDER:
            out.extend(getattr(self, name).params)
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name in _NET_ORDER:
            for pname, tensor in getattr(self, name).params.items():
                out[f"{name}.{pname}"] = tensor
        return out


def build_model(
    d_x: int,
    d_z: int,
    schedule: NoiseSchedule,
    hidden_dim: int = 64,
    depth: int = 2,
    kind: str = MLP,
    activation: str = "tanh",
    seed: int = 0,
    dynamics: str = NOISE_MODEL_DYNAMICS,
) -> AlternatorModel:
    """Construct a model with freshly initialized networks."""
    net_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(4)]

    def spec(i, o):
        return NetworkSpec(
            input_dim=i, output_dim=o, hidden_dim=hidden_dim, depth=depth,
            kind=kind, activation=activation,
        )

    return AlternatorModel(
        d_x=d_x,
        d_z=d_z,
        obs_net=Network.build(spec(d_z, d_x), net_seeds[0]),
        lat_net=Network.build(spec(d_x, d_z), net_seeds[1]),
        obs_noise_net=Network.build(spec(d_z, d_x), net_seeds[2]),
        lat_noise_net=Network.build(spec(d_z + d_x, d_z), net_seeds[3]),
        schedule=schedule,
        dynamics=dynamics,
    )


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def mean_x_components(
    model: AlternatorModel, z_prev, t: int, want_noise_pred: bool = False
) -> tuple[Tensor, "Tensor | None"]:
    """(mu_x, obs-noise prediction) at step t.

    The noise network is evaluated only when its coefficient is nonzero or
    the caller asks for the prediction (the noise-matching loss does); when
    the coefficient is exactly zero it never enters the mean, keeping the
    boundary degeneration bitwise exact.
    """
    z_prev = _as_tensor(z_prev)
    if model.dynamics == VANILLA_DYNAMICS:
        mu = ad.scale(model.obs_net(z_prev), np.sqrt(1.0 - model.schedule.sigma_x**2))
        pred = model.obs_noise_net(z_prev) if want_noise_pred else None
        return mu, pred
    sqrt_b, c = model.schedule.coef_x(t)
    mu = ad.scale(model.obs_net(z_prev), sqrt_b)
    pred = None
    if c != 0.0 or want_noise_pred:
        pred = model.obs_noise_net(z_prev)
    if c != 0.0:
        mu = ad.add(mu, ad.scale(pred, c))
    return mu, pred


def mean_z_components(
    model: AlternatorModel, z_prev, x_t, t: int, want_noise_pred: bool = False
) -> tuple[Tensor, "Tensor | None"]:
    """(mu_z, latent-noise prediction) at step t; see mean_x_components."""
    z_prev = _as_tensor(z_prev)
    x_t = _as_tensor(x_t)
    sqrt_a, c = model.schedule.coef_z(t)
    mu = ad.scale(model.lat_net(x_t), sqrt_a)
    if model.dynamics == VANILLA_DYNAMICS:
        if c != 0.0:
            mu = ad.add(mu, ad.scale(z_prev, c))
        pred = (
            model.lat_noise_net(ad.concat([z_prev, x_t], axis=-1))
            if want_noise_pred else None
        )
        return mu, pred
    pred = None
    if c != 0.0 or want_noise_pred:
        pred = model.lat_noise_net(ad.concat([z_prev, x_t], axis=-1))
    if c != 0.0:
        mu = ad.add(mu, ad.scale(pred, c))
    return mu, pred


def mean_x(model: AlternatorModel, z_prev, t: int) -> Tensor:
    """Observation mean at step t given the previous latent state.

    Accepts (d_z,) vectors or (batch, d_z) matrices. Differentiable w.r.t.
    both contributing networks.
    """
    return mean_x_components(model, z_prev, t)[0]


def mean_z(model: AlternatorModel, z_prev, x_t, t: int) -> Tensor:
    """Latent mean at step t from the previous latent and current observation."""
    return mean_z_components(model, z_prev, x_t, t)[0]


def sample_step(model: AlternatorModel, z_prev, t: int, noise_x, noise_z):
    """One alternation step with caller-supplied standard-normal noise.

    Returns (x_t, z_t, mu_x, mu_z). Noise enters linearly: x_t is exactly
    mu_x + sigma_x * noise_x.
    """
    mu_x = mean_x(model, z_prev, t)
    x_t = ad.shift(mu_x, model.schedule.sigma_x * np.asarray(noise_x, dtype=np.float64))
    mu_z = mean_z(model, z_prev, x_t, t)
    z_t = ad.shift(mu_z, model.schedule.sigma_z * np.asarray(noise_z, dtype=np.float64))
    return x_t, z_t, mu_x, mu_z


@dataclass
class Trajectory:
    """One generated rollout: observations, latents (z_0 first), and means."""

    xs: np.ndarray     # (T, d_x)
    zs: np.ndarray     # (T+1, d_z)
    mu_xs: np.ndarray  # (T, d_x)
    mu_zs: np.ndarray  # (T, d_z)


@dataclass
class BatchTrajectories:
    xs: np.ndarray     # (n, T, d_x)
    zs: np.ndarray     # (n, T+1, d_z)
    mu_xs: np.ndarray  # (n, T, d_x)
    mu_zs: np.ndarray  # (n, T, d_z)


def generate_batch(model: AlternatorModel, n: int, T: int, seed: int) -> BatchTrajectories:
    """Sample n independent trajectories of length T in one vectorized sweep.

    Draw order per step (fixed for reproducibility): z_0 first, then for
    each t the observation noise followed by the latent noise.
    """
    if T < 1:
        raise ConfigError("horizon must be >= 1")
    if T > model.schedule.T:
        raise ConfigError(f"horizon {T} exceeds schedule length {model.schedule.T}")
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((n, model.d_z)))
    xs = np.empty((n, T, model.d_x))
    zs = np.empty((n, T + 1, model.d_z))
    mu_xs = np.empty((n, T, model.d_x))
    mu_zs = np.empty((n, T, model.d_z))
    zs[:, 0] = z.data
    for t in range(1, T + 1):
        noise_x = rng.standard_normal((n, model.d_x))
        noise_z = rng.standard_normal((n, model.d_z))
        x_t, z_t, mu_x, mu_z = sample_step(model, z, t, noise_x, noise_z)
        xs[:, t - 1] = x_t.data
        zs[:, t] = z_t.data
        mu_xs[:, t - 1] = mu_x.data
        mu_zs[:, t - 1] = mu_z.data
        z = z_t
    return BatchTrajectories(xs=xs, zs=zs, mu_xs=mu_xs, mu_zs=mu_zs)


def generate(model: AlternatorModel, T: int, seed: int) -> Trajectory:
    """Sample a single trajectory (batch generation with n=1)."""
    b = generate_batch(model, 1, T, seed)
    return Trajectory(xs=b.xs[0], zs=b.zs[0], mu_xs=b.mu_xs[0], mu_zs=b.mu_zs[0])


def encode_states(
    model: AlternatorModel,
    xs: np.ndarray,
    seed: int,
    mean_propagation: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Latent means for a clamped observation sequence, plus the final state.

    The recursion follows the generative process but feeds the given x_t to
    the latent update at every step. By default the carried latent is
    sampled (mu_z + sigma_z * noise); with ``mean_propagation`` the mean is
    carried directly, giving a fully deterministic embedding.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != model.d_x:
        raise ConfigError(f"expected (T, {model.d_x}) observations, got {xs.shape}")
    T = xs.shape[0]
    if T > model.schedule.T:
        raise ConfigError(f"sequence length {T} exceeds schedule length {model.schedule.T}")
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal(model.d_z))
    mu_zs = np.empty((T, model.d_z))
    for t in range(1, T + 1):
        mu_z = mean_z(model, z, xs[t - 1], t)
        mu_zs[t - 1] = mu_z.data
        if mean_propagation:
            z = mu_z
        else:
            noise = rng.standard_normal(model.d_z)
            z = ad.shift(mu_z, model.schedule.sigma_z * noise)
    return mu_zs, z.data


def encode(
    model: AlternatorModel,
    xs: np.ndarray,
    seed: int,
    mean_propagation: bool = False,
) -> np.ndarray:
    """Sequence of latent means (T, d_z) for the given observations."""
    mu_zs, _ = encode_states(model, xs, seed, mean_propagation)
    return mu_zs


# --- checkpoint serialization ------------------------------------------------

_MAGIC = b"ALTNCKP1"
_VERSION = 1
_KIND_CODE = {MLP: 0, SELF_ATTENTION: 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}
_ACT_CODE = {"tanh": 0, "gelu": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}
_DYN_CODE = {NOISE_MODEL_DYNAMICS: 0, VANILLA_DYNAMICS: 1}
_DYN_NAME = {v: k for k, v in _DYN_CODE.items()}


def _pack_network(buf: io.BytesIO, net: Network) -> None:
    s = net.spec
    buf.write(struct.pack(
        "<BIIIIB", _KIND_CODE[s.kind], s.input_dim, s.output_dim,
        s.hidden_dim, s.depth, _ACT_CODE[s.activation],
    ))
    names = net.params.names()
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        arr = net.params[name].data
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr).tobytes())


def save_model(model: AlternatorModel, path) -> None:
    """Write a single-file binary checkpoint with a trailing CRC32."""
    buf = io.BytesIO()
    s = model.schedule
    buf.write(struct.pack(
        "<IIIIB dd", _VERSION, model.d_x, model.d_z, s.T, _DYN_CODE[model.dynamics],
        s.sigma_x, s.sigma_z,
    ))
    buf.write(s.beta.tobytes())
    buf.write(s.alpha.tobytes())
    for name in _NET_ORDER:
        _pack_network(buf, getattr(model, name))
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _unpack_network(r: _Reader) -> Network:
    kind_code, in_dim, out_dim, hidden, depth, act_code = r.unpack("<BIIIIB")
    if kind_code not in _KIND_NAME or act_code not in _ACT_NAME:
        raise CheckpointError("checkpoint contains an unknown network kind/activation")
    spec = NetworkSpec(
        input_dim=in_dim, output_dim=out_dim, hidden_dim=hidden, depth=depth,
        kind=_KIND_NAME[kind_code], activation=_ACT_NAME[act_code],
    )
    (n_params,) = r.unpack("<I")
    params = ParameterSet()
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack("<I")[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * count), dtype=np.float64).reshape(shape)
        params.add(name, arr)
    reference = init_parameters(spec, 0)
    if params.names() != reference.names():
        raise CheckpointError("checkpoint parameter layout does not match its network spec")
    for name in reference.names():
        if params[name].data.shape != reference[name].data.shape:
            raise CheckpointError(f"checkpoint parameter {name} has an inconsistent shape")
    return Network(spec=spec, params=params)


def load_model(path) -> AlternatorModel:
    """Read a checkpoint written by :func:`save_model`; bitwise round trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    payload, (crc,) = blob[len(_MAGIC):-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checksum mismatch: checkpoint corrupted")
    r = _Reader(payload)
    version, d_x, d_z, T, dyn_code, sigma_x, sigma_z = r.unpack("<IIIIB dd")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if dyn_code not in _DYN_NAME:
        raise CheckpointError("checkpoint contains unknown dynamics flag")
    beta = np.frombuffer(r.take(8 * T), dtype=np.float64).copy()
    alpha = np.frombuffer(r.take(8 * T), dtype=np.float64).copy()
    schedule = NoiseSchedule(beta=beta, alpha=alpha, sigma_x=sigma_x, sigma_z=sigma_z)
    nets = {name: _unpack_network(r) for name in _NET_ORDER}
    if r.pos != len(payload):
        raise CheckpointError("checkpoint has trailing bytes")
    try:
        return AlternatorModel(
            d_x=d_x, d_z=d_z, schedule=schedule, dynamics=_DYN_NAME[dyn_code], **nets
        )
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint header inconsistent with contents: {exc}") from exc
