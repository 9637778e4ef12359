"""
Toy dual-tower diffusion transformer.

Each modality has its own stack of adaLN-modulated blocks (self-attention with
rotary phases, text cross-attention, SiLU MLP). At the interaction layers a
bridge block lets each tower attend to the other's hidden states on the shared
time grid. Parameters live in a flat name -> Tensor dict so the optimizer,
checkpoints and gradient checks can address them by name.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ContractError, DimensionError, DomainError
from .ropealign import RotaryBasis, TimeGrid, apply_rotary, audio_positions, video_positions

logger = logging.getLogger(__name__)

VIDEO = "video"
AUDIO = "audio"
MODALITIES = (VIDEO, AUDIO)

BRIDGE_PREFIX = "bridge."


@dataclass(frozen=True)
class TowerConfig:
    depth: int = 4
    width: int = 64
    heads: int = 4
    seq_len: int = 12
    modality: str = VIDEO
    latent_dim: int = 8
    name: str = ""

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"tower modality must be one of {MODALITIES}, got {self.modality!r}")
        if min(self.depth, self.width, self.heads, self.seq_len, self.latent_dim) < 1:
            raise ContractError(f"tower sizes must be positive: {self}")
        if self.width % self.heads:
            raise ContractError(f"tower width {self.width} is not divisible by {self.heads} heads")
        if (self.width // self.heads) % 2:
            raise ContractError(f"tower head dim {self.width // self.heads} must be even for rotary phases")
        if not self.name:
            object.__setattr__(self, "name", self.modality)

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


@dataclass(frozen=True)
class BridgeConfig:
    # None places a bridge block after every other layer, starting at 0
    interaction_layers: tuple[int, ...] | None = None
    width: int = 64
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads or (self.width // self.heads) % 2:
            raise ContractError(f"bridge width {self.width} must split into {self.heads} heads of even size")

    def layers(self, depth: int) -> tuple[int, ...]:
        if self.interaction_layers is None:
            return tuple(range(0, depth, 2))
        layers = tuple(sorted(set(int(x) for x in self.interaction_layers)))
        bad = [x for x in layers if not 0 <= x < depth]
        if bad:
            raise ContractError(f"bridge interaction layers {bad} outside [0, {depth})")
        return layers


@dataclass(frozen=True)
class DualExperts:
    """Two video towers split by timestep; exactly one runs per forward."""

    high_noise_tower: TowerConfig
    low_noise_tower: TowerConfig
    t_split: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.t_split < 1.0:
            raise DomainError(f"t_split must lie in (0, 1), got {self.t_split}")


def select_expert(experts: DualExperts, t_v: float) -> TowerConfig:
    """High-noise tower iff t_v >= t_split; the boundary goes to the high-noise expert."""
    return experts.high_noise_tower if t_v >= experts.t_split else experts.low_noise_tower


@dataclass(frozen=True)
class ConditionSet:
    # None stands for the null text condition
    text_tokens: tuple[int, ...] | None = None
    bridge_enabled: bool = True
    first_frame: np.ndarray | None = field(default=None, compare=False)

    def without_text(self) -> "ConditionSet":
        return dataclasses.replace(self, text_tokens=None)

    def with_bridge(self, enabled: bool) -> "ConditionSet":
        return dataclasses.replace(self, bridge_enabled=enabled)

    @classmethod
    def t2va(cls, text_tokens, latent_dim: int) -> "ConditionSet":
        """Text-only generation: the first frame is the constant white frame."""
        return cls(text_tokens=tuple(text_tokens), first_frame=white_frame(latent_dim))

    @classmethod
    def ti2va(cls, text_tokens, frame) -> "ConditionSet":
        return cls(text_tokens=tuple(text_tokens), first_frame=np.asarray(frame, dtype=np.float64))


def white_frame(latent_dim: int) -> np.ndarray:
    return np.ones(latent_dim, dtype=np.float64)


@dataclass(frozen=True)
class ModelConfig:
    video: TowerConfig = field(default_factory=lambda: TowerConfig(modality=VIDEO, seq_len=12))
    audio: TowerConfig = field(default_factory=lambda: TowerConfig(modality=AUDIO, seq_len=48))
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    f_v: float = 1.5
    f_a: float = 6.0
    duration_s: float = 8.0
    rope_base: float = 10000.0
    text_vocab: int = 16
    text_len: int = 6
    text_width: int = 32
    time_dim: int = 32
    dual_experts: bool = False
    t_split: float = 0.5
    bridge_zero_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.video.modality != VIDEO or self.audio.modality != AUDIO:
            raise ContractError("video and audio towers must carry their own modality")
        grid = self.grid
        for tower, expected in ((self.video, grid.video_tokens(self.duration_s)), (self.audio, grid.audio_tokens(self.duration_s))):
            if tower.seq_len != expected:
                raise ContractError(
                    f"{tower.modality} seq_len {tower.seq_len} does not match the time grid ({expected} tokens over {self.duration_s} s)"
                )
        self.bridge.layers(min(self.video.depth, self.audio.depth))
        if self.time_dim % 2:
            raise ContractError(f"time_dim must be even, got {self.time_dim}")
        if self.dual_experts:
            self.experts  # noqa: B018 - validates t_split

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(f_v=self.f_v, f_a=self.f_a)

    @property
    def experts(self) -> DualExperts | None:
        if not self.dual_experts:
            return None
        return DualExperts(
            high_noise_tower=dataclasses.replace(self.video, name="video_high"),
            low_noise_tower=dataclasses.replace(self.video, name="video_low"),
            t_split=self.t_split,
        )

    @property
    def video_towers(self) -> tuple[TowerConfig, ...]:
        experts = self.experts
        if experts is None:
            return (self.video,)
        return (experts.high_noise_tower, experts.low_noise_tower)

    def with_grid(self, f_v: float, f_a: float) -> "ModelConfig":
        """Same architecture on another frame rate; the parameters stay valid."""
        grid = TimeGrid(f_v=f_v, f_a=f_a)
        return dataclasses.replace(
            self,
            f_v=f_v,
            f_a=f_a,
            video=dataclasses.replace(self.video, seq_len=grid.video_tokens(self.duration_s)),
            audio=dataclasses.replace(self.audio, seq_len=grid.audio_tokens(self.duration_s)),
        )

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Depth 2, width 32: small enough for finite-difference checks."""
        base = dict(
            video=TowerConfig(depth=2, width=32, heads=2, seq_len=12, modality=VIDEO, latent_dim=4),
            audio=TowerConfig(depth=2, width=32, heads=2, seq_len=48, modality=AUDIO, latent_dim=4),
            bridge=BridgeConfig(width=32, heads=2),
            text_width=16,
            time_dim=16,
        )
        base.update(overrides)
        return cls(**base)


def _normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_parameters(config: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(config.seed)
    params: dict[str, Tensor] = {}

    def dense(name, fan_in, fan_out, std_scale=1.0, bias=True):
        params[f"{name}.w"] = _normal(rng, (fan_in, fan_out), std_scale / math.sqrt(fan_in))
        if bias:
            params[f"{name}.b"] = _zeros(fan_out)

    tw = config.text_width
    params["text.embed"] = _normal(rng, (config.text_vocab, tw), 1.0)
    params["text.null"] = _normal(rng, (config.text_len, tw), 1.0)
    dense("frame", config.video.latent_dim, config.video.width)

    for tower in (*config.video_towers, config.audio):
        p, w = tower.name, tower.width
        dense(f"{p}.in", tower.latent_dim, w)
        dense(f"{p}.time1", config.time_dim, w)
        dense(f"{p}.time2", w, w)
        for layer in range(tower.depth):
            lp = f"{p}.l{layer}"
            dense(f"{lp}.mod", w, 4 * w, std_scale=0.1)
            for proj in ("q", "k", "v", "o"):
                dense(f"{lp}.attn.{proj}", w, w, bias=False)
            dense(f"{lp}.xattn.q", w, w, bias=False)
            dense(f"{lp}.xattn.k", tw, w, bias=False)
            dense(f"{lp}.xattn.v", tw, w, bias=False)
            dense(f"{lp}.xattn.o", w, w, bias=False)
            dense(f"{lp}.mlp1", w, 2 * w)
            dense(f"{lp}.mlp2", 2 * w, w)
            for norm in ("norm1", "norm2", "norm3"):
                params[f"{lp}.{norm}.g"] = _ones(w)
        params[f"{p}.out_norm.g"] = _ones(w)
        dense(f"{p}.out", w, tower.latent_dim)

    wv, wa, wb = config.video.width, config.audio.width, config.bridge.width
    for layer in config.bridge.layers(min(config.video.depth, config.audio.depth)):
        for direction, (w_q, w_kv) in (("a2v", (wv, wa)), ("v2a", (wa, wv))):
            bp = f"{BRIDGE_PREFIX}l{layer}.{direction}"
            params[f"{bp}.norm_q.g"] = _ones(w_q)
            params[f"{bp}.norm_kv.g"] = _ones(w_kv)
            dense(f"{bp}.q", w_q, wb, bias=False)
            dense(f"{bp}.k", w_kv, wb, bias=False)
            dense(f"{bp}.v", w_kv, wb, bias=False)
            if config.bridge_zero_init:
                params[f"{bp}.o.w"] = _zeros((wb, w_q))
            else:
                dense(f"{bp}.o", wb, w_q, bias=False)
    return params


def attention(
    x_q: Tensor,
    x_kv: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    basis: RotaryBasis | None = None,
    q_pos=None,
    k_pos=None,
) -> Tensor:
    """Multi-head attention of x_q[Sq, *] over x_kv[Sk, *]; rotary phases when a basis is given."""
    width = wq.shape[1]
    dh = width // heads

    def split(x, w):
        h = dc.matmul(x, w)
        return dc.transpose(dc.reshape(h, (x.shape[0], heads, dh)), (1, 0, 2))

    q, k, v = split(x_q, wq), split(x_kv, wk), split(x_kv, wv)
    if basis is not None:
        q = apply_rotary(q, q_pos, basis)
        k = apply_rotary(k, k_pos, basis)
    scores = dc.scale(dc.matmul(q, dc.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    out = dc.matmul(dc.softmax_rows(scores), v)
    out = dc.reshape(dc.transpose(out, (1, 0, 2)), (x_q.shape[0], width))
    return dc.matmul(out, wo)


class DualTowerModel:
    def __init__(self, config: ModelConfig | None = None, params: dict[str, Tensor] | None = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_parameters(self.config)
        self.grid = self.config.grid
        self._bridge_layers = self.config.bridge.layers(min(self.config.video.depth, self.config.audio.depth))
        self._tower_basis = {
            t.name: RotaryBasis(t.head_dim, self.config.rope_base) for t in (*self.config.video_towers, self.config.audio)
        }
        self._bridge_basis = RotaryBasis(self.config.bridge.width // self.config.bridge.heads, self.config.rope_base)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return dict(sorted(self.params.items()))

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.params.values()]))

    def parameter_audit(self) -> dict[str, int]:
        """Parameter count per top-level group (tower names, text, frame, bridge) plus the total."""
        audit: dict[str, int] = {}
        for name, p in self.params.items():
            group = name.split(".", 1)[0]
            audit[group] = audit.get(group, 0) + p.size
        audit["total"] = self.parameter_count()
        return dict(sorted(audit.items()))

    def with_params(self, overrides: dict[str, Tensor]) -> "DualTowerModel":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ContractError(f"unknown parameters: {sorted(unknown)}")
        return DualTowerModel(self.config, {**self.params, **overrides})

    def with_config(self, config: ModelConfig) -> "DualTowerModel":
        """Rebind the same parameters to a config that differs only in sequence geometry."""
        return DualTowerModel(config, self.params)

    def tower_for(self, t_v: float) -> TowerConfig:
        experts = self.config.experts
        return self.config.video if experts is None else select_expert(experts, t_v)

    # ------------------------------------------------------------------
    # blocks
    # ------------------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _dense(self, x: Tensor, name: str) -> Tensor:
        bias = self.params.get(f"{name}.b")
        return dc.linear(x, self._p(f"{name}.w"), bias)

    def _time_vector(self, prefix: str, tau: float) -> Tensor:
        emb = dc.reshape(dc.timestep_embedding(tau, self.config.time_dim), (1, self.config.time_dim))
        h = dc.silu(self._dense(emb, f"{prefix}.time1"))
        return dc.silu(self._dense(h, f"{prefix}.time2"))

    def _text_features(self, cond: ConditionSet) -> Tensor:
        if cond.text_tokens is None:
            return self._p("text.null")
        if len(cond.text_tokens) != self.config.text_len:
            raise DimensionError(f"text prompt has {len(cond.text_tokens)} tokens, expected {self.config.text_len}")
        return dc.embedding(self._p("text.embed"), cond.text_tokens)

    def _tower_layer(self, tower: TowerConfig, layer: int, h: Tensor, c: Tensor, text: Tensor, positions) -> Tensor:
        lp = f"{tower.name}.l{layer}"
        w = tower.width
        mod = dc.reshape(self._dense(c, f"{lp}.mod"), (4 * w,))
        shift_a, scale_a, shift_m, scale_m = (dc.slice_axis(mod, i * w, (i + 1) * w) for i in range(4))

        x = dc.add(dc.mul(dc.rms_norm(h, self._p(f"{lp}.norm1.g")), dc.add_scalar(scale_a, 1.0)), shift_a)
        attn = [self._p(f"{lp}.attn.{n}.w") for n in ("q", "k", "v", "o")]
        h = dc.add(h, attention(x, x, *attn, tower.heads, self._tower_basis[tower.name], positions, positions))

        x = dc.rms_norm(h, self._p(f"{lp}.norm2.g"))
        xattn = [self._p(f"{lp}.xattn.{n}.w") for n in ("q", "k", "v", "o")]
        h = dc.add(h, attention(x, text, *xattn, tower.heads))

        x = dc.add(dc.mul(dc.rms_norm(h, self._p(f"{lp}.norm3.g")), dc.add_scalar(scale_m, 1.0)), shift_m)
        return dc.add(h, self._dense(dc.silu(self._dense(x, f"{lp}.mlp1")), f"{lp}.mlp2"))

    def bridge_block(self, h_v: Tensor, h_a: Tensor, layer: int, frame_token: bool = False) -> tuple[Tensor, Tensor]:
        """
        h_v' = h_v + CrossAttn(q=h_v, kv=h_a) and h_a' = h_a + CrossAttn(q=h_a, kv=h_v),
        both computed from the incoming states with positions on the shared time grid.
        """
        if layer not in self._bridge_layers:
            raise ContractError(f"layer {layer} is not a bridge interaction layer {self._bridge_layers}")
        n_v = h_v.shape[0] - int(frame_token)
        pos_v = ([0.0] if frame_token else []) + video_positions(self.grid, n_v)
        pos_a = audio_positions(self.grid, h_a.shape[0])
        heads = self.config.bridge.heads
        basis = self._bridge_basis

        def cross(direction, h_q, h_kv, q_pos, k_pos):
            bp = f"{BRIDGE_PREFIX}l{layer}.{direction}"
            return attention(
                dc.rms_norm(h_q, self._p(f"{bp}.norm_q.g")),
                dc.rms_norm(h_kv, self._p(f"{bp}.norm_kv.g")),
                *(self._p(f"{bp}.{n}.w") for n in ("q", "k", "v", "o")),
                heads,
                basis,
                q_pos,
                k_pos,
            )

        v_update = cross("a2v", h_v, h_a, pos_v, pos_a)
        a_update = cross("v2a", h_a, h_v, pos_a, pos_v)
        return dc.add(h_v, v_update), dc.add(h_a, a_update)

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _check_inputs(self, z_v: Tensor, z_a: Tensor, tau_v: float, tau_a: float) -> None:
        cfg = self.config
        if z_v.shape != (cfg.video.seq_len, cfg.video.latent_dim):
            raise DimensionError(f"video latent {z_v.shape}, expected {(cfg.video.seq_len, cfg.video.latent_dim)}")
        if z_a.shape != (cfg.audio.seq_len, cfg.audio.latent_dim):
            raise DimensionError(f"audio latent {z_a.shape}, expected {(cfg.audio.seq_len, cfg.audio.latent_dim)}")
        dc.check_finite(z_v, "video latent")
        dc.check_finite(z_a, "audio latent")
        for name, tau in (("tau_v", tau_v), ("tau_a", tau_a)):
            if not (math.isfinite(tau) and tau >= 0.0):
                raise DomainError(f"{name} must be a finite non-negative effective time, got {tau}")

    def forward(
        self,
        z_v: Tensor,
        z_a: Tensor,
        tau_v: float,
        tau_a: float,
        cond: ConditionSet,
        t_v: float | None = None,
    ) -> tuple[Tensor, Tensor]:
        """
        Predicted velocities (v_hat_v, v_hat_a), shaped like the inputs.

        With dual experts the video tower is routed by `t_v`, or by `tau_v`
        when no raw timestep is given.
        """
        self._check_inputs(z_v, z_a, tau_v, tau_a)
        cfg = self.config
        video = self.tower_for(tau_v if t_v is None else t_v)
        audio = cfg.audio
        text = self._text_features(cond)

        h_v = self._dense(z_v, f"{video.name}.in")
        frame_token = cond.first_frame is not None
        if frame_token:
            frame = np.asarray(cond.first_frame, dtype=np.float64).reshape(1, -1)
            if frame.shape[1] != video.latent_dim:
                raise DimensionError(f"first frame has {frame.shape[1]} channels, expected {video.latent_dim}")
            h_v = dc.concat([self._dense(Tensor(frame), "frame"), h_v], axis=0)
        h_a = self._dense(z_a, f"{audio.name}.in")

        pos_v = ([0.0] if frame_token else []) + [float(i) for i in range(video.seq_len)]
        pos_a = [float(j) for j in range(audio.seq_len)]
        c_v = self._time_vector(video.name, tau_v)
        c_a = self._time_vector(audio.name, tau_a)

        for layer in range(max(video.depth, audio.depth)):
            if layer < video.depth:
                h_v = self._tower_layer(video, layer, h_v, c_v, text, pos_v)
            if layer < audio.depth:
                h_a = self._tower_layer(audio, layer, h_a, c_a, text, pos_a)
            if cond.bridge_enabled and layer in self._bridge_layers:
                h_v, h_a = self.bridge_block(h_v, h_a, layer, frame_token=frame_token)

        if frame_token:
            h_v = dc.slice_axis(h_v, 1, h_v.shape[0], axis=0)
        v_hat_v = self._dense(dc.rms_norm(h_v, self._p(f"{video.name}.out_norm.g")), f"{video.name}.out")
        v_hat_a = self._dense(dc.rms_norm(h_a, self._p(f"{audio.name}.out_norm.g")), f"{audio.name}.out")
        return v_hat_v, v_hat_a

    __call__ = forward
