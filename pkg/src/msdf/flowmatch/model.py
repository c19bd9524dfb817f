"""Permutation-equivariant velocity network over set-structured inputs.

Each representation row becomes a token; time enters as one extra token
carrying sinusoidal features, the class condition as another (a learned
table with a final null row for unconditional use).  The time and class
embeddings modulate every norm's affine pair and gate a direct copy of the
input rows into the output, because the regression target contains the
input scaled by a time-dependent coefficient that narrow token widths
cannot otherwise express.  Attention has no positional encoding, and every
matmul and token-axis reduction in the forward pass runs in order-invariant
arithmetic (BLAS kernel selection may round position-dependently
otherwise), so permuting the input rows permutes the output rows
bit-exactly.  Only the data-token outputs are returned.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..diffkit import tensor as tk
from ..diffkit.checkpoint import load_checkpoint, save_checkpoint
from ..diffkit.tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    d: int                 # row width of the set input
    num_classes: int
    h: int = 64            # token width
    layers: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.h % self.heads != 0:
            raise ValueError(f"width {self.h} not divisible by {self.heads} heads")
        if self.h % 2 != 0:
            raise ValueError(f"width {self.h} must be even for sin/cos time features")

    @property
    def null_class(self) -> int:
        return self.num_classes


def time_features(t: float, width: int) -> np.ndarray:
    """Sinusoidal features of the scalar time, geometric frequency ladder."""
    half = width // 2
    freqs = np.exp(np.linspace(np.log(1.0), np.log(1000.0), half))
    ang = freqs * float(t)
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float32)


class VelocityModel:
    """Transformer velocity field U(x, t, c) mapping (n, d) sets to (n, d)."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else _init_params(config, seed)
        self.ema_shadow: dict[str, np.ndarray] | None = None

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra: dict | None = None,
             ema: dict[str, np.ndarray] | None = None) -> None:
        record = dict(self.params)
        if ema is not None:
            record.update({f"ema/{k}": v for k, v in ema.items()})
        trailer = {"model": asdict(self.config)}
        if extra:
            trailer.update(extra)
        save_checkpoint(path, record, json.dumps(trailer).encode("utf-8"))

    @classmethod
    def load(cls, path, use_ema: bool = True) -> tuple["VelocityModel", dict]:
        """Returns (model, trailer dict); prefers EMA weights when present."""
        record, trailer_bytes = load_checkpoint(path)
        trailer = json.loads(trailer_bytes.decode("utf-8")) if trailer_bytes else {}
        if "model" not in trailer:
            raise ValueError(f"{path}: checkpoint lacks a model config trailer")
        config = ModelConfig(**trailer["model"])
        ema = {k[len("ema/"):]: v for k, v in record.items() if k.startswith("ema/")}
        raw = {k: v for k, v in record.items() if not k.startswith("ema/")}
        params = ema if (use_ema and ema) else raw
        return cls(config, params), trailer

    # -- forward -------------------------------------------------------------

    def forward(self, x: np.ndarray, t: float, cond: int | None,
                params: dict[str, Tensor] | None = None) -> Tensor:
        """Velocity for one set (n, d).  ``params`` supplies tape-tracked
        tensors during training; inference wraps the stored arrays."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != cfg.d:
            raise ValueError(f"input must be (n, {cfg.d}), got {x.shape}")
        cid = cfg.null_class if cond is None else int(cond)
        if not 0 <= cid <= cfg.num_classes:
            raise ValueError(f"unknown class id {cond} (have {cfg.num_classes} classes)")
        p = params if params is not None else \
            {k: Tensor(v) for k, v in self.params.items()}
        n = x.shape[0]

        tokens = tk.add(tk.matmul(Tensor(x), p["in_w"], invariant=True), p["in_b"])
        tfeat = Tensor(time_features(t, cfg.h)[None, :])
        ttok = tk.add(tk.matmul(tfeat, p["time_w"], invariant=True), p["time_b"])
        ctok = tk.take_rows(p["cond_table"], [cid])
        seq = tk.concat([tokens, ttok, ctok], axis=0)
        # conditioning vector for the modulated norms; row-independent, so
        # it cannot break permutation equivariance
        cvec = tk.gelu(tk.add(ttok, ctok))

        for i in range(cfg.layers):
            seq = tk.add(seq, self._attention(seq, p, i, cvec))
            seq = tk.add(seq, self._mlp(seq, p, i, cvec))
        seq = _modulated_norm(seq, p["final_ln_g"], p["final_ln_b"],
                              cvec, p["final_ada_gw"], p["final_ada_bw"])
        out = tk.add(tk.matmul(seq, p["out_w"], invariant=True), p["out_b"])
        # gated copy of the raw input row: the velocity's input coefficient
        # is a time scalar, which token width alone cannot reproduce
        gate = tk.reshape(tk.matmul(cvec, p["skip_gate_w"], invariant=True),
                          (cfg.d,))
        return tk.add(out[:n], tk.multiply(Tensor(x), gate))

    def _attention(self, seq: Tensor, p: dict[str, Tensor], i: int, cvec: Tensor) -> Tensor:
        cfg = self.config
        nh, dh = cfg.heads, cfg.h // cfg.heads
        tcount = seq.shape[0]
        xn = _modulated_norm(seq, p[f"blk{i}_ln1_g"], p[f"blk{i}_ln1_b"],
                             cvec, p[f"blk{i}_ada1_gw"], p[f"blk{i}_ada1_bw"])
        q = tk.add(tk.matmul(xn, p[f"blk{i}_q_w"], invariant=True), p[f"blk{i}_q_b"])
        k = tk.add(tk.matmul(xn, p[f"blk{i}_k_w"], invariant=True), p[f"blk{i}_k_b"])
        v = tk.add(tk.matmul(xn, p[f"blk{i}_v_w"], invariant=True), p[f"blk{i}_v_b"])
        # (T, h) -> (heads, T, dh)
        q = tk.transpose(tk.reshape(q, (tcount, nh, dh)), (1, 0, 2))
        k = tk.transpose(tk.reshape(k, (tcount, nh, dh)), (1, 0, 2))
        v = tk.transpose(tk.reshape(v, (tcount, nh, dh)), (1, 0, 2))
        # feature-axis contraction: ordering-safe with plain matmul
        scores = tk.scale(tk.matmul(q, tk.transpose(k, (0, 2, 1)), invariant=True), 1.0 / np.sqrt(dh))
        # token-axis reductions must not leak row order
        attn = tk.softmax(scores, axis=-1, invariant=True)
        mixed = tk.matmul(attn, v, invariant=True)
        merged = tk.reshape(tk.transpose(mixed, (1, 0, 2)), (tcount, cfg.h))
        return tk.add(tk.matmul(merged, p[f"blk{i}_o_w"], invariant=True), p[f"blk{i}_o_b"])

    def _mlp(self, seq: Tensor, p: dict[str, Tensor], i: int, cvec: Tensor) -> Tensor:
        xn = _modulated_norm(seq, p[f"blk{i}_ln2_g"], p[f"blk{i}_ln2_b"],
                             cvec, p[f"blk{i}_ada2_gw"], p[f"blk{i}_ada2_bw"])
        hidden = tk.gelu(tk.add(tk.matmul(xn, p[f"blk{i}_m1_w"], invariant=True), p[f"blk{i}_m1_b"]))
        return tk.add(tk.matmul(hidden, p[f"blk{i}_m2_w"], invariant=True), p[f"blk{i}_m2_b"])


def _modulated_norm(x: Tensor, gain: Tensor, bias: Tensor, cvec: Tensor,
                    ada_gw: Tensor, ada_bw: Tensor) -> Tensor:
    """LayerNorm whose affine pair is shifted by the conditioning vector.

    The velocity field needs time-scaled copies of its input (the target is
    (X1 - rho*Xt)/(1 - rho*t)); letting the time embedding modulate the norm
    gains provides that multiplicative pathway directly.
    """
    width = gain.shape[0]
    g = tk.add(gain, tk.reshape(tk.matmul(cvec, ada_gw, invariant=True), (width,)))
    b = tk.add(bias, tk.reshape(tk.matmul(cvec, ada_bw, invariant=True), (width,)))
    return tk.add(tk.multiply(tk.layer_norm(x, axis=-1), g), b)


def _init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E57AB1E]))

    def dense(fan_in, fan_out):
        return (rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)).astype(np.float32)

    p = {"in_w": dense(cfg.d, cfg.h), "in_b": np.zeros(cfg.h, np.float32),
         "time_w": dense(cfg.h, cfg.h), "time_b": np.zeros(cfg.h, np.float32),
         "cond_table": (rng.normal(size=(cfg.num_classes + 1, cfg.h)) * 0.02).astype(np.float32),
         "final_ln_g": np.ones(cfg.h, np.float32), "final_ln_b": np.zeros(cfg.h, np.float32),
         # zero-init modulation: norms start unconditioned
         "final_ada_gw": np.zeros((cfg.h, cfg.h), np.float32),
         "final_ada_bw": np.zeros((cfg.h, cfg.h), np.float32),
         # zero-init output: the field starts at zero, residuals learn from there
         "out_w": np.zeros((cfg.h, cfg.d), np.float32), "out_b": np.zeros(cfg.d, np.float32),
         "skip_gate_w": np.zeros((cfg.h, cfg.d), np.float32)}
    for i in range(cfg.layers):
        p[f"blk{i}_ln1_g"] = np.ones(cfg.h, np.float32)
        p[f"blk{i}_ln1_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_ada1_gw"] = np.zeros((cfg.h, cfg.h), np.float32)
        p[f"blk{i}_ada1_bw"] = np.zeros((cfg.h, cfg.h), np.float32)
        p[f"blk{i}_ada2_gw"] = np.zeros((cfg.h, cfg.h), np.float32)
        p[f"blk{i}_ada2_bw"] = np.zeros((cfg.h, cfg.h), np.float32)
        p[f"blk{i}_q_w"] = dense(cfg.h, cfg.h)
        p[f"blk{i}_q_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_k_w"] = dense(cfg.h, cfg.h)
        p[f"blk{i}_k_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_v_w"] = dense(cfg.h, cfg.h)
        p[f"blk{i}_v_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_o_w"] = dense(cfg.h, cfg.h)
        p[f"blk{i}_o_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_ln2_g"] = np.ones(cfg.h, np.float32)
        p[f"blk{i}_ln2_b"] = np.zeros(cfg.h, np.float32)
        p[f"blk{i}_m1_w"] = dense(cfg.h, 4 * cfg.h)
        p[f"blk{i}_m1_b"] = np.zeros(4 * cfg.h, np.float32)
        p[f"blk{i}_m2_w"] = dense(4 * cfg.h, cfg.h)
        p[f"blk{i}_m2_b"] = np.zeros(cfg.h, np.float32)
    return p
