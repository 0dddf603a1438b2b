"""Knowledge-guided clustered vector-quantized autoencoder.

Feed-forward encoder/decoder with a finite codebook, straight-through
gradient estimation, auxiliary pseudo-class and interaction heads, plain SGD
training with dead-code revival, and finite-difference gradient checking.
All gradients are hand-derived; numpy only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .types import (
    N_CLASSES,
    N_FEATURES,
    N_SLOTS,
    T_OBS,
    ScenarioRecord,
)

CHECKPOINT_FORMAT_VERSION = "scenmine-checkpoint-v1"


class TrainingError(Exception):
    """Raised when training diverges (non-finite loss)."""


class ContractError(Exception):
    """Shape mismatch between data and model."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_cl: float = 1.0
    lambda_int: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    commitment_weight: float = 0.25
    dead_code_threshold: float = 1e-3
    usage_decay: float = 0.99
    revival_noise: float = 0.01
    hidden: tuple[int, ...] = (256, 256)
    latent_dim: int = 64
    codebook_size: int = 64

    def __post_init__(self):
        if self.lambda_cl < 0 or self.lambda_int < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    codebook_term: float
    commit_term: float
    cl: float
    inter: float
    total: float

    @staticmethod
    def combine(recon, codebook_term, commit_term, cl, inter, lambda_cl, lambda_int):
        total = recon + codebook_term + commit_term + lambda_cl * cl + lambda_int * inter
        return LossBreakdown(recon, codebook_term, commit_term, cl, inter, total)


@dataclass
class ModelParams:
    """All weights of the model plus input standardization and code usage.

    Arrays are mutable during training and must be treated as read-only
    afterwards. ``codebook_update`` documents the chosen update rule for the
    checkpoint.
    """

    n_slots: int
    n_features: int
    t_obs: int
    n_classes: int
    hidden: tuple[int, ...]
    latent_dim: int
    codebook_size: int
    enc_w: list[np.ndarray]
    enc_b: list[np.ndarray]
    dec_w: list[np.ndarray]
    dec_b: list[np.ndarray]
    codebook: np.ndarray       # (Q, d)
    cl_w: np.ndarray           # (S, d)
    cl_b: np.ndarray
    int_w: np.ndarray          # (n_slots * t_obs, d)
    int_b: np.ndarray
    feature_shift: np.ndarray  # (n_features,)
    feature_scale: np.ndarray  # (n_features,)
    usage: np.ndarray          # (Q,), exponential moving usage per code
    codebook_update: str = "sgd-gradient"

    @property
    def input_dim(self) -> int:
        return self.n_slots * self.n_features * self.t_obs


def init_params(
    cfg: TrainConfig,
    rng: np.random.Generator,
    n_slots: int = N_SLOTS,
    n_features: int = N_FEATURES,
    t_obs: int = T_OBS,
    n_classes: int = N_CLASSES,
    feature_shift: Optional[np.ndarray] = None,
    feature_scale: Optional[np.ndarray] = None,
) -> ModelParams:
    input_dim = n_slots * n_features * t_obs
    enc_sizes = [input_dim, *cfg.hidden, cfg.latent_dim]
    dec_sizes = [cfg.latent_dim, *reversed(cfg.hidden), input_dim]

    def layer(n_out, n_in):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

    return ModelParams(
        n_slots=n_slots,
        n_features=n_features,
        t_obs=t_obs,
        n_classes=n_classes,
        hidden=tuple(cfg.hidden),
        latent_dim=cfg.latent_dim,
        codebook_size=cfg.codebook_size,
        enc_w=[layer(b, a) for a, b in zip(enc_sizes, enc_sizes[1:])],
        enc_b=[np.zeros(b) for b in enc_sizes[1:]],
        dec_w=[layer(b, a) for a, b in zip(dec_sizes, dec_sizes[1:])],
        dec_b=[np.zeros(b) for b in dec_sizes[1:]],
        codebook=rng.normal(0.0, 0.1, size=(cfg.codebook_size, cfg.latent_dim)),
        cl_w=layer(n_classes, cfg.latent_dim),
        cl_b=np.zeros(n_classes),
        int_w=layer(n_slots * t_obs, cfg.latent_dim),
        int_b=np.zeros(n_slots * t_obs),
        feature_shift=(
            feature_shift if feature_shift is not None else np.zeros(n_features)
        ).astype(float),
        feature_scale=(
            feature_scale if feature_scale is not None else np.ones(n_features)
        ).astype(float),
        usage=np.full(cfg.codebook_size, 1.0 / cfg.codebook_size),
    )


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def _standardize(inputs: np.ndarray, masks: np.ndarray, params: ModelParams) -> np.ndarray:
    """(B, N, F, T) -> standardized, absent cells forced to zero."""
    shift = params.feature_shift[None, None, :, None]
    scale = params.feature_scale[None, None, :, None]
    return ((inputs - shift) / scale) * masks[:, :, None, :].astype(float)


def _encode_batch(x_flat: np.ndarray, params: ModelParams) -> tuple[np.ndarray, list[np.ndarray]]:
    h = x_flat
    cache = [h]
    last = len(params.enc_w) - 1
    for i, (w, b) in enumerate(zip(params.enc_w, params.enc_b)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        cache.append(h)
    return h, cache


def _decode_batch(z: np.ndarray, params: ModelParams) -> tuple[np.ndarray, list[np.ndarray]]:
    h = z
    cache = [h]
    last = len(params.dec_w) - 1
    for i, (w, b) in enumerate(zip(params.dec_w, params.dec_b)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        cache.append(h)
    return h, cache


def _quantize_batch(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(z * z, axis=1, keepdims=True)
        - 2.0 * z @ codebook.T
        + np.sum(codebook * codebook, axis=1)
    )
    return np.argmin(d2, axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


# ---------------------------------------------------------------------------
# Single-record operations (public surface)
# ---------------------------------------------------------------------------

def _check_shape(tensor_values: np.ndarray, params: ModelParams) -> None:
    expected = (params.n_slots, params.n_features, params.t_obs)
    if tensor_values.shape != expected:
        raise ContractError(f"input shape {tensor_values.shape} != {expected}")


def encode(tensor_values: np.ndarray, mask: np.ndarray, params: ModelParams) -> np.ndarray:
    """Deterministic encoder map to the continuous latent in R^d."""
    _check_shape(tensor_values, params)
    x = _standardize(tensor_values[None], mask[None], params)
    z, _ = _encode_batch(x.reshape(1, -1), params)
    return z[0]


def quantize(z: np.ndarray, codebook: np.ndarray) -> tuple[int, np.ndarray]:
    """Nearest codebook entry by squared Euclidean distance; ties break to
    the lowest index."""
    if codebook.size == 0:
        raise ValueError("codebook must be non-empty")
    q = int(_quantize_batch(np.asarray(z, dtype=float)[None], codebook)[0])
    return q, codebook[q].copy()


def decode(z_q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Reconstruction of the (standardized) scenario tensor from a latent."""
    x_hat, _ = _decode_batch(np.asarray(z_q, dtype=float)[None], params)
    return x_hat[0].reshape(params.n_slots, params.n_features, params.t_obs)


def classify(z_q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Pseudo-class probabilities from the discretized latent."""
    return _softmax(params.cl_w @ np.asarray(z_q, dtype=float) + params.cl_b)


def predict_interaction(z_q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Predicted interaction matrix in [0,1]^{N x T}."""
    u = params.int_w @ np.asarray(z_q, dtype=float) + params.int_b
    return _sigmoid(u).reshape(params.n_slots, params.t_obs)


# ---------------------------------------------------------------------------
# Batched loss and gradients
# ---------------------------------------------------------------------------

def _forward(inputs: np.ndarray, masks: np.ndarray, params: ModelParams) -> dict:
    x = _standardize(inputs, masks, params)
    x_flat = x.reshape(x.shape[0], -1)
    z, enc_cache = _encode_batch(x_flat, params)
    q = _quantize_batch(z, params.codebook)
    z_q = params.codebook[q]
    x_hat, dec_cache = _decode_batch(z_q, params)
    logits = z_q @ params.cl_w.T + params.cl_b
    probs = _softmax(logits)
    u = z_q @ params.int_w.T + params.int_b
    t_hat = _sigmoid(u)
    return {
        "x_flat": x_flat,
        "enc_cache": enc_cache,
        "dec_cache": dec_cache,
        "z": z,
        "q": q,
        "z_q": z_q,
        "x_hat": x_hat,
        "probs": probs,
        "t_hat": t_hat,
    }


def _per_term_losses(
    fwd: dict,
    masks: np.ndarray,
    class_targets: Optional[np.ndarray],
    interaction_targets: Optional[np.ndarray],
    cfg: TrainConfig,
    params: ModelParams,
) -> dict[str, np.ndarray]:
    """Per-sample loss terms. Reconstruction and interaction errors are mean
    squared error over present cells only; codebook and commitment terms are
    means over the latent dimension."""
    b = fwd["z"].shape[0]
    cell_mask = np.repeat(masks[:, :, None, :], params.n_features, axis=2).reshape(b, -1)
    cell_counts = np.maximum(cell_mask.sum(axis=1), 1.0)
    diff = (fwd["x_hat"] - fwd["x_flat"]) * cell_mask
    recon = (diff * diff).sum(axis=1) / cell_counts

    gap = fwd["z"] - fwd["z_q"]
    codebook_term = np.mean(gap * gap, axis=1)
    commit_term = cfg.commitment_weight * codebook_term

    if class_targets is not None:
        cl = -np.sum(class_targets * np.log(np.maximum(fwd["probs"], 1e-300)), axis=1)
    else:
        cl = np.zeros(b)

    if interaction_targets is not None:
        slot_mask = masks.reshape(b, -1).astype(float)
        slot_counts = np.maximum(slot_mask.sum(axis=1), 1.0)
        idiff = (fwd["t_hat"] - interaction_targets.reshape(b, -1)) * slot_mask
        inter = (idiff * idiff).sum(axis=1) / slot_counts
    else:
        inter = np.zeros(b)

    return {
        "recon": recon,
        "codebook_term": codebook_term,
        "commit_term": commit_term,
        "cl": cl,
        "inter": inter,
    }


def _zero_grads(params: ModelParams) -> dict:
    return {
        "enc_w": [np.zeros_like(w) for w in params.enc_w],
        "enc_b": [np.zeros_like(b) for b in params.enc_b],
        "dec_w": [np.zeros_like(w) for w in params.dec_w],
        "dec_b": [np.zeros_like(b) for b in params.dec_b],
        "codebook": np.zeros_like(params.codebook),
        "cl_w": np.zeros_like(params.cl_w),
        "cl_b": np.zeros_like(params.cl_b),
        "int_w": np.zeros_like(params.int_w),
        "int_b": np.zeros_like(params.int_b),
    }


def _backward(
    fwd: dict,
    masks: np.ndarray,
    class_targets: Optional[np.ndarray],
    interaction_targets: Optional[np.ndarray],
    cfg: TrainConfig,
    params: ModelParams,
) -> dict:
    """Gradients of the batch-mean total loss. The quantization gap gradient
    is passed straight through from the decoder (and head) inputs onto the
    encoder output; the codebook receives only the vector-quantization term.
    """
    b = fwd["z"].shape[0]
    grads = _zero_grads(params)

    cell_mask = np.repeat(masks[:, :, None, :], params.n_features, axis=2).reshape(b, -1)
    cell_counts = np.maximum(cell_mask.sum(axis=1), 1.0)
    g_xhat = 2.0 * cell_mask * (fwd["x_hat"] - fwd["x_flat"]) / cell_counts[:, None] / b

    # Decoder backprop.
    dec_cache = fwd["dec_cache"]
    g = g_xhat
    last = len(params.dec_w) - 1
    for i in range(last, -1, -1):
        h_in = dec_cache[i]
        grads["dec_w"][i] = g.T @ h_in
        grads["dec_b"][i] = g.sum(axis=0)
        g = g @ params.dec_w[i]
        if i > 0:
            g = g * (1.0 - dec_cache[i] * dec_cache[i])
    g_zq = g  # dL/d(decoder input)

    # Heads (inputs are z_q; gradients reach the encoder via straight-through).
    if class_targets is not None and cfg.lambda_cl > 0:
        g_logits = cfg.lambda_cl * (fwd["probs"] - class_targets) / b
        grads["cl_w"] = g_logits.T @ fwd["z_q"]
        grads["cl_b"] = g_logits.sum(axis=0)
        g_zq = g_zq + g_logits @ params.cl_w
    if interaction_targets is not None and cfg.lambda_int > 0:
        slot_mask = masks.reshape(b, -1).astype(float)
        slot_counts = np.maximum(slot_mask.sum(axis=1), 1.0)
        t_hat = fwd["t_hat"]
        g_u = (
            cfg.lambda_int
            * 2.0
            * slot_mask
            * (t_hat - interaction_targets.reshape(b, -1))
            / slot_counts[:, None]
            / b
            * t_hat
            * (1.0 - t_hat)
        )
        grads["int_w"] = g_u.T @ fwd["z_q"]
        grads["int_b"] = g_u.sum(axis=0)
        g_zq = g_zq + g_u @ params.int_w

    # Codebook: vector-quantization term only.
    gap = fwd["z_q"] - fwd["z"]
    code_grad = 2.0 * gap / params.latent_dim / b
    np.add.at(grads["codebook"], fwd["q"], code_grad)

    # Encoder: straight-through decoder/head gradient plus commitment term.
    g_z = g_zq + cfg.commitment_weight * 2.0 * (fwd["z"] - fwd["z_q"]) / params.latent_dim / b
    enc_cache = fwd["enc_cache"]
    g = g_z
    last = len(params.enc_w) - 1
    for i in range(last, -1, -1):
        h_in = enc_cache[i]
        grads["enc_w"][i] = g.T @ h_in
        grads["enc_b"][i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.enc_w[i]
            g = g * (1.0 - enc_cache[i] * enc_cache[i])
    return grads


def loss(record: ScenarioRecord, params: ModelParams, cfg: TrainConfig) -> LossBreakdown:
    """Full loss decomposition for one record."""
    inputs, masks, cls, inter = _record_arrays([record])
    fwd = _forward(inputs, masks, params)
    terms = _per_term_losses(fwd, masks, cls, inter, cfg, params)
    return LossBreakdown.combine(
        float(terms["recon"][0]),
        float(terms["codebook_term"][0]),
        float(terms["commit_term"][0]),
        float(terms["cl"][0]),
        float(terms["inter"][0]),
        cfg.lambda_cl,
        cfg.lambda_int,
    )


def _record_arrays(records: Sequence[ScenarioRecord]):
    inputs = np.stack([r.tensor.values for r in records])
    masks = np.stack([r.tensor.presence_mask for r in records])
    cls = np.stack([r.pseudo_class.one_hot for r in records])
    inter = np.stack([r.interaction.values for r in records])
    return inputs, masks, cls, inter


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def fit_standardization(inputs: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over present cells; std floored at 1e-6."""
    n_features = inputs.shape[2]
    shift = np.zeros(n_features)
    scale = np.ones(n_features)
    cell_mask = masks[:, :, None, :]
    for f in range(n_features):
        vals = inputs[:, :, f, :][cell_mask[:, :, 0, :]]
        if vals.size:
            shift[f] = vals.mean()
            scale[f] = max(float(vals.std()), 1e-6)
    return shift, scale


def train_arrays(
    inputs: np.ndarray,
    masks: np.ndarray,
    class_targets: Optional[np.ndarray],
    interaction_targets: Optional[np.ndarray],
    cfg: TrainConfig,
    n_classes: int = N_CLASSES,
) -> tuple[ModelParams, list[LossBreakdown]]:
    """Mini-batch SGD over raw arrays. See ``train`` for the record API."""
    if inputs.shape[0] == 0:
        raise ValueError("dataset must be non-empty")
    n_samples, n_slots, n_features, t_obs = inputs.shape
    rng = np.random.default_rng(cfg.seed)
    shift, scale = fit_standardization(inputs, masks)
    params = init_params(
        cfg,
        rng,
        n_slots=n_slots,
        n_features=n_features,
        t_obs=t_obs,
        n_classes=n_classes,
        feature_shift=shift,
        feature_scale=scale,
    )

    history: list[LossBreakdown] = []
    recent_z = np.zeros((0, cfg.latent_dim))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_samples)
        sums = {"recon": 0.0, "codebook_term": 0.0, "commit_term": 0.0, "cl": 0.0, "inter": 0.0}
        for batch_no, start in enumerate(range(0, n_samples, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            fwd = _forward(inputs[idx], masks[idx], params)
            terms = _per_term_losses(
                fwd,
                masks[idx],
                None if class_targets is None else class_targets[idx],
                None if interaction_targets is None else interaction_targets[idx],
                cfg,
                params,
            )
            batch_total = (
                terms["recon"]
                + terms["codebook_term"]
                + terms["commit_term"]
                + cfg.lambda_cl * terms["cl"]
                + cfg.lambda_int * terms["inter"]
            ).mean()
            if not np.isfinite(batch_total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            grads = _backward(
                fwd,
                masks[idx],
                None if class_targets is None else class_targets[idx],
                None if interaction_targets is None else interaction_targets[idx],
                cfg,
                params,
            )
            lr = cfg.learning_rate
            for i in range(len(params.enc_w)):
                params.enc_w[i] -= lr * grads["enc_w"][i]
                params.enc_b[i] -= lr * grads["enc_b"][i]
            for i in range(len(params.dec_w)):
                params.dec_w[i] -= lr * grads["dec_w"][i]
                params.dec_b[i] -= lr * grads["dec_b"][i]
            params.codebook -= lr * grads["codebook"]
            params.cl_w -= lr * grads["cl_w"]
            params.cl_b -= lr * grads["cl_b"]
            params.int_w -= lr * grads["int_w"]
            params.int_b -= lr * grads["int_b"]

            counts = np.bincount(fwd["q"], minlength=cfg.codebook_size) / len(idx)
            params.usage = cfg.usage_decay * params.usage + (1.0 - cfg.usage_decay) * counts
            recent_z = fwd["z"]
            for key in sums:
                sums[key] += float(terms[key].sum())

        # Dead-code revival from recent encoder outputs.
        dead = np.flatnonzero(params.usage < cfg.dead_code_threshold)
        if dead.size and recent_z.shape[0]:
            for q in dead:
                pick = recent_z[int(rng.integers(recent_z.shape[0]))]
                params.codebook[q] = pick + rng.normal(0.0, cfg.revival_noise, cfg.latent_dim)
                params.usage[q] = 1.0 / cfg.codebook_size
        history.append(
            LossBreakdown.combine(
                sums["recon"] / n_samples,
                sums["codebook_term"] / n_samples,
                sums["commit_term"] / n_samples,
                sums["cl"] / n_samples,
                sums["inter"] / n_samples,
                cfg.lambda_cl,
                cfg.lambda_int,
            )
        )
    return params, history


def train(
    dataset: Sequence[ScenarioRecord], cfg: TrainConfig
) -> tuple[ModelParams, list[LossBreakdown]]:
    """Trains on ScenarioRecords; deterministic for a fixed seed."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    inputs, masks, cls, inter = _record_arrays(dataset)
    return train_arrays(inputs, masks, cls, inter, cfg)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def _param_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, arr in enumerate(params.enc_w):
        named.append((f"enc_w[{i}]", arr))
    for i, arr in enumerate(params.enc_b):
        named.append((f"enc_b[{i}]", arr))
    for i, arr in enumerate(params.dec_w):
        named.append((f"dec_w[{i}]", arr))
    for i, arr in enumerate(params.dec_b):
        named.append((f"dec_b[{i}]", arr))
    named.append(("codebook", params.codebook))
    named.append(("cl_w", params.cl_w))
    named.append(("cl_b", params.cl_b))
    named.append(("int_w", params.int_w))
    named.append(("int_b", params.int_b))
    return named


def _grads_for(name: str, grads: dict) -> np.ndarray:
    if "[" in name:
        base, idx = name[:-1].split("[")
        return grads[base][int(idx)]
    return grads[name]


def _frozen_total(
    inputs: np.ndarray,
    masks: np.ndarray,
    class_targets: Optional[np.ndarray],
    interaction_targets: Optional[np.ndarray],
    params: ModelParams,
    cfg: TrainConfig,
    q0: np.ndarray,
    z0: np.ndarray,
    gap0: np.ndarray,
) -> float:
    """Total loss with the quantization index frozen and the quantization gap
    treated as a constant, exactly the function whose gradient the
    straight-through estimator computes."""
    x = _standardize(inputs, masks, params)
    x_flat = x.reshape(x.shape[0], -1)
    z, _ = _encode_batch(x_flat, params)
    z_dec = z + gap0
    x_hat, _ = _decode_batch(z_dec, params)
    probs = _softmax(z_dec @ params.cl_w.T + params.cl_b)
    t_hat = _sigmoid(z_dec @ params.int_w.T + params.int_b)
    fwd = {"x_flat": x_flat, "x_hat": x_hat, "probs": probs, "t_hat": t_hat,
           "z": z, "z_q": params.codebook[q0]}
    b = z.shape[0]
    cell_mask = np.repeat(masks[:, :, None, :], params.n_features, axis=2).reshape(b, -1)
    cell_counts = np.maximum(cell_mask.sum(axis=1), 1.0)
    diff = (x_hat - x_flat) * cell_mask
    recon = (diff * diff).sum(axis=1) / cell_counts

    codebook_term = np.mean((z0 - params.codebook[q0]) ** 2, axis=1)
    commit_term = cfg.commitment_weight * np.mean((z - (z0 + gap0)) ** 2, axis=1)

    if class_targets is not None:
        cl = -np.sum(class_targets * np.log(np.maximum(probs, 1e-300)), axis=1)
    else:
        cl = np.zeros(b)
    if interaction_targets is not None:
        slot_mask = masks.reshape(b, -1).astype(float)
        slot_counts = np.maximum(slot_mask.sum(axis=1), 1.0)
        idiff = (t_hat - interaction_targets.reshape(b, -1)) * slot_mask
        inter = (idiff * idiff).sum(axis=1) / slot_counts
    else:
        inter = np.zeros(b)
    total = (
        recon + codebook_term + commit_term + cfg.lambda_cl * cl + cfg.lambda_int * inter
    )
    return float(total.mean())


def grad_check_arrays(
    inputs: np.ndarray,
    masks: np.ndarray,
    class_targets: Optional[np.ndarray],
    interaction_targets: Optional[np.ndarray],
    params: ModelParams,
    cfg: TrainConfig,
    epsilon: float = 1e-5,
    n_checks: int = 120,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over a random parameter subset; the quantization index is
    frozen at its base-point value for the numeric path."""
    fwd = _forward(inputs, masks, params)
    grads = _backward(fwd, masks, class_targets, interaction_targets, cfg, params)
    q0 = fwd["q"].copy()
    z0 = fwd["z"].copy()
    gap0 = fwd["z_q"] - fwd["z"]

    named = _param_arrays(params)
    sizes = np.array([arr.size for _, arr in named])
    total_size = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total_size, size=min(n_checks, total_size), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    max_err = 0.0
    for flat_idx in picks:
        arr_i = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, arr = named[arr_i]
        local = int(flat_idx - offsets[arr_i])
        multi = np.unravel_index(local, arr.shape)
        orig = arr[multi]
        arr[multi] = orig + epsilon
        up = _frozen_total(inputs, masks, class_targets, interaction_targets, params, cfg, q0, z0, gap0)
        arr[multi] = orig - epsilon
        down = _frozen_total(inputs, masks, class_targets, interaction_targets, params, cfg, q0, z0, gap0)
        arr[multi] = orig
        numeric = (up - down) / (2.0 * epsilon)
        analytic = float(_grads_for(name, grads)[multi])
        err = abs(analytic - numeric) / max(abs(numeric), 1e-8)
        max_err = max(max_err, err)
    return max_err


def grad_check(
    record: ScenarioRecord,
    params: ModelParams,
    cfg: TrainConfig,
    epsilon: float = 1e-5,
    n_checks: int = 120,
    seed: int = 0,
) -> float:
    inputs, masks, cls, inter = _record_arrays([record])
    return grad_check_arrays(inputs, masks, cls, inter, params, cfg, epsilon, n_checks, seed)


# ---------------------------------------------------------------------------
# Checkpoint persistence (versioned header + raw float64 arrays)
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    named = _param_arrays(params) + [
        ("feature_shift", params.feature_shift),
        ("feature_scale", params.feature_scale),
        ("usage", params.usage),
    ]
    header = {
        "format": CHECKPOINT_FORMAT_VERSION,
        "n_slots": params.n_slots,
        "n_features": params.n_features,
        "t_obs": params.t_obs,
        "n_classes": params.n_classes,
        "hidden": list(params.hidden),
        "latent_dim": params.latent_dim,
        "codebook_size": params.codebook_size,
        "codebook_update": params.codebook_update,
        "arrays": [[name, list(arr.shape)] for name, arr in named],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in named:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT_VERSION:
            raise ContractError(f"unsupported checkpoint format {header.get('format')!r}")
        blobs = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            blobs[name] = data.copy()

    cfg = TrainConfig(
        hidden=tuple(header["hidden"]),
        latent_dim=header["latent_dim"],
        codebook_size=header["codebook_size"],
    )
    params = init_params(
        cfg,
        np.random.default_rng(0),
        n_slots=header["n_slots"],
        n_features=header["n_features"],
        t_obs=header["t_obs"],
        n_classes=header["n_classes"],
    )
    for i in range(len(params.enc_w)):
        params.enc_w[i] = blobs[f"enc_w[{i}]"]
        params.enc_b[i] = blobs[f"enc_b[{i}]"]
    for i in range(len(params.dec_w)):
        params.dec_w[i] = blobs[f"dec_w[{i}]"]
        params.dec_b[i] = blobs[f"dec_b[{i}]"]
    params.codebook = blobs["codebook"]
    params.cl_w = blobs["cl_w"]
    params.cl_b = blobs["cl_b"]
    params.int_w = blobs["int_w"]
    params.int_b = blobs["int_b"]
    params.feature_shift = blobs["feature_shift"]
    params.feature_scale = blobs["feature_scale"]
    params.usage = blobs["usage"]
    params.codebook_update = header["codebook_update"]
    return params


def write_loss_history(history: Sequence[LossBreakdown], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,recon,codebook,commit,cl,int,total\n")
        for epoch, lb in enumerate(history):
            fh.write(
                f"{epoch},{lb.recon!r},{lb.codebook_term!r},{lb.commit_term!r},"
                f"{lb.cl!r},{lb.inter!r},{lb.total!r}\n"
            )
