"""Ego behavior-change detection: adaptive threshold rules, the EMA-energy
and snippet-clustering baselines, and detector scoring against ground truth.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import (
    ChangePoint,
    CompositeLabel,
    LatState,
    LongState,
    Trajectory,
)

DEFAULT_UP_PAIRS = ((0.2, 100), (0.3, 50), (0.4, 25))


class StateError(Exception):
    """Operation requires state (e.g. a trained model) that is missing."""


@dataclass(frozen=True)
class DetectorConfig:
    up_pairs: tuple[tuple[float, int], ...] = DEFAULT_UP_PAIRS
    tau_down: float = 0.1       # m/s^2, hysteresis below the smallest tau_up
    n_down: int = 25            # frames
    tau_extreme: float = 2.5    # m/s^2
    tau_lc: float = 2.0         # m, > half lane width
    min_segment: int = 3        # frames; shorter segments are absorbed

    def __post_init__(self):
        if not self.up_pairs:
            raise ValueError("at least one (tau_up, n_up) pair is required")
        for tau, n in self.up_pairs:
            if tau <= 0 or n < 1:
                raise ValueError("up_pairs require tau_up > 0 and n_up >= 1")
        if self.tau_down <= 0 or self.tau_lc <= 0 or self.n_down < 1:
            raise ValueError("thresholds must be positive")
        if self.tau_extreme <= max(tau for tau, _ in self.up_pairs):
            raise ValueError("tau_extreme must exceed every tau_up")
        if self.min_segment < 1:
            raise ValueError("min_segment must be >= 1")


@dataclass(frozen=True)
class Segment:
    start_frame: int  # inclusive
    end_frame: int    # inclusive
    label: object     # CompositeLabel / LongState / LatState depending on stage

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError("segment start must not exceed end")

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class DetectionMatch:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn > 0 else 0.0


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as (start, end_inclusive)."""
    out = []
    n = len(mask)
    t = 0
    while t < n:
        if mask[t]:
            s = t
            while t + 1 < n and mask[t + 1]:
                t += 1
            out.append((s, t))
        t += 1
    return out


def detect_longitudinal(traj: Trajectory, cfg: DetectorConfig) -> list[LongState]:
    """Per-frame longitudinal state from adaptive threshold-duration rules.

    State machine: start in ZERO; leave ZERO at the first frame of any run
    where some (tau_up, n_up) pair is satisfied; return to ZERO at the start
    of a run of n_down frames with |ax| < tau_down; |ax| > tau_extreme
    switches to the extreme state immediately.
    """
    ax = traj.arrays()["ax"]
    n = len(ax)

    pos_onsets: set[int] = set()
    neg_onsets: set[int] = set()
    for tau, n_up in cfg.up_pairs:
        for s, e in _runs(ax > tau):
            if e - s + 1 >= n_up:
                pos_onsets.add(s)
        for s, e in _runs(ax < -tau):
            if e - s + 1 >= n_up:
                neg_onsets.add(s)
    zero_onsets = {
        s for s, e in _runs(np.abs(ax) < cfg.tau_down) if e - s + 1 >= cfg.n_down
    }

    states: list[LongState] = []
    cur = LongState.ZERO
    for t in range(n):
        if ax[t] > cfg.tau_extreme:
            cur = LongState.EXTREME_ACCELERATE
        elif ax[t] < -cfg.tau_extreme:
            cur = LongState.EXTREME_DECELERATE
        elif cur is LongState.ZERO:
            if t in pos_onsets:
                cur = LongState.ACCELERATE
            elif t in neg_onsets:
                cur = LongState.DECELERATE
        else:
            if t in zero_onsets:
                cur = LongState.ZERO
        states.append(cur)
    return states


def detect_lateral(traj: Trajectory, cfg: DetectorConfig) -> list[Segment]:
    """Partitions the trajectory into maximal constant-sign(vy) intervals and
    labels each LANE_CHANGE iff its accumulated |sum(vy * dt)| exceeds tau_LC.
    """
    cols = traj.arrays()
    vy = cols["vy"]
    frames = cols["frame"]
    signs = np.sign(vy)
    segments: list[Segment] = []
    t = 0
    n = len(vy)
    while t < n:
        s = t
        while t + 1 < n and signs[t + 1] == signs[s]:
            t += 1
        displacement = float(np.sum(vy[s : t + 1]) * traj.dt)
        label = LatState.LANE_CHANGE if abs(displacement) > cfg.tau_lc else LatState.KEEP_LANE
        segments.append(Segment(int(frames[s]), int(frames[t]), label))
        t += 1
    return segments


def _merge_equal_neighbors(segments: list[Segment]) -> list[Segment]:
    out: list[Segment] = []
    for seg in segments:
        if out and out[-1].label == seg.label:
            out[-1] = Segment(out[-1].start_frame, seg.end_frame, seg.label)
        else:
            out.append(seg)
    return out


def postprocess(
    longitudinal: Sequence[LongState],
    lateral: Sequence[Segment],
    cfg: DetectorConfig,
    first_frame: int = 0,
) -> tuple[list[Segment], list[ChangePoint]]:
    """Combines per-frame longitudinal states with lateral segments into
    composite-label segments and emits a ChangePoint at every boundary.

    Short segments (< min_segment frames) are absorbed into the preceding
    segment; consecutive lane-change segments are merged into one, keeping
    the longitudinal state of the longer constituent.
    """
    n = len(longitudinal)
    lat_per_frame = [LatState.KEEP_LANE] * n
    for seg in lateral:
        for t in range(seg.start_frame - first_frame, seg.end_frame - first_frame + 1):
            if not 0 <= t < n:
                raise ValueError("lateral segments must cover the longitudinal frame range")
            lat_per_frame[t] = seg.label

    # Frame-wise composite labels -> maximal same-label segments.
    segments: list[Segment] = []
    t = 0
    while t < n:
        s = t
        label = CompositeLabel(longitudinal[s], lat_per_frame[s])
        while t + 1 < n and CompositeLabel(longitudinal[t + 1], lat_per_frame[t + 1]) == label:
            t += 1
        segments.append(Segment(s + first_frame, t + first_frame, label))
        t += 1

    # Absorb short segments into their predecessor (the first segment, having
    # no predecessor, is absorbed into its successor), then re-merge.
    changed = True
    while changed:
        changed = False
        for i, seg in enumerate(segments):
            if seg.length < cfg.min_segment and len(segments) > 1:
                if i > 0:
                    segments[i - 1] = Segment(
                        segments[i - 1].start_frame, seg.end_frame, segments[i - 1].label
                    )
                else:
                    segments[1] = Segment(seg.start_frame, segments[1].end_frame, segments[1].label)
                del segments[i]
                segments = _merge_equal_neighbors(segments)
                changed = True
                break

    # Merge consecutive lane-change segments, keeping the longitudinal state
    # of the longer constituent.
    merged: list[Segment] = []
    for seg in segments:
        if (
            merged
            and merged[-1].label.lateral is LatState.LANE_CHANGE
            and seg.label.lateral is LatState.LANE_CHANGE
        ):
            prev = merged[-1]
            keep = prev.label if prev.length >= seg.length else seg.label
            merged[-1] = Segment(prev.start_frame, seg.end_frame, keep)
        else:
            merged.append(seg)
    segments = _merge_equal_neighbors(merged)

    change_points = [
        ChangePoint(t_c=b.start_frame, label_before=a.label, label_after=b.label)
        for a, b in zip(segments, segments[1:])
    ]
    return segments, change_points


def detect_rule_based(traj: Trajectory, cfg: DetectorConfig) -> list[ChangePoint]:
    """Full rule-based pipeline: longitudinal + lateral + post-processing."""
    longitudinal = detect_longitudinal(traj, cfg)
    lateral = detect_lateral(traj, cfg)
    _, change_points = postprocess(longitudinal, lateral, cfg, first_frame=traj.first_frame)
    return change_points


# ---------------------------------------------------------------------------
# EMA-energy baseline
# ---------------------------------------------------------------------------

def _ema(signal: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(signal)
    out[0] = signal[0]
    for t in range(1, len(signal)):
        out[t] = alpha * signal[t] + (1 - alpha) * out[t - 1]
    return out


def detect_ema(
    traj: Trajectory,
    window_sizes: Sequence[int] = (30, 60, 90),
    ema_alpha: float = 0.05,
    peak_threshold: Optional[float] = None,
) -> list[int]:
    """Residual-energy change detector: events at strict local maxima of the
    scaled window energy of (signal - EMA), per channel (ax, vy).

    Returns at least one event per trajectory (the global energy maximum if
    no local maximum passes the threshold). peak_threshold defaults to
    3x the median window energy of each energy series.
    """
    cols = traj.arrays()
    frames = cols["frame"]
    n = len(frames)
    if min(window_sizes) > n:
        raise ValueError("window sizes must not exceed the trajectory length")

    candidates: list[tuple[float, int]] = []  # (energy, local index)
    best_global: tuple[float, int] | None = None
    for channel in ("ax", "vy"):
        residual = cols[channel] - _ema(cols[channel], ema_alpha)
        sq = residual * residual
        for w in window_sizes:
            half = w // 2
            kernel = np.ones(2 * half + 1)
            energy = np.convolve(sq, kernel, mode="same") / w
            threshold = (
                peak_threshold if peak_threshold is not None else 3.0 * float(np.median(energy))
            )
            peak = int(np.argmax(energy))
            if best_global is None or energy[peak] > best_global[0]:
                best_global = (float(energy[peak]), peak)
            interior = np.arange(1, n - 1)
            local_max = (energy[interior] > energy[interior - 1]) & (
                energy[interior] > energy[interior + 1]
            )
            for t in interior[local_max]:
                if energy[t] > threshold:
                    candidates.append((float(energy[t]), int(t)))

    min_distance = min(window_sizes)
    kept: list[int] = []
    for _, t in sorted(candidates, key=lambda c: (-c[0], c[1])):
        if all(abs(t - k) >= min_distance for k in kept):
            kept.append(t)
    if not kept:
        kept = [best_global[1]]
    return sorted(int(frames[t]) for t in kept)


# ---------------------------------------------------------------------------
# Snippet-clustering baseline (reuses the quantizing autoencoder)
# ---------------------------------------------------------------------------

def snippet_features(traj: Trajectory, start: int, length: int) -> np.ndarray:
    """(1, 6, length) single-vehicle snippet with positions relative to the
    snippet's first frame, suitable as model input."""
    cols = traj.arrays()
    sl = slice(start, start + length)
    feats = np.stack(
        [
            cols["x"][sl] - cols["x"][start],
            cols["y"][sl] - cols["y"][start],
            cols["vx"][sl],
            cols["vy"][sl],
            cols["ax"][sl],
            cols["ay"][sl],
        ]
    )
    return feats[None, :, :]


def train_snippet_model(
    trajs: Sequence[Trajectory],
    snippet_len: int = 50,
    clusters: int = 64,
    epochs: int = 50,
    seed: int = 0,
    hidden: tuple[int, int] = (64, 64),
    latent_dim: int = 16,
):
    """Trains a snippet-level quantizing autoencoder for the baseline."""
    from . import cvqvae

    snippets = []
    for traj in trajs:
        for s in range(0, len(traj) - snippet_len + 1, snippet_len):
            snippets.append(snippet_features(traj, s, snippet_len))
    if not snippets:
        raise StateError("no snippets available to train the baseline model")
    inputs = np.stack(snippets)
    masks = np.ones((len(snippets), 1, snippet_len), dtype=bool)
    cfg = cvqvae.TrainConfig(
        lambda_cl=0.0,
        lambda_int=0.0,
        epochs=epochs,
        seed=seed,
        hidden=hidden,
        latent_dim=latent_dim,
        codebook_size=clusters,
    )
    params, _ = cvqvae.train_arrays(
        inputs, masks, class_targets=None, interaction_targets=None, cfg=cfg
    )
    return params


def detect_snippet_cluster(
    trajs: Sequence[Trajectory],
    model,
    snippet_len: int = 50,
) -> list[list[int]]:
    """Per trajectory: change frames where the codebook index assigned to
    consecutive non-overlapping snippets switches."""
    from . import cvqvae

    if model is None:
        raise StateError("snippet clustering requires a trained model")
    results: list[list[int]] = []
    for traj in trajs:
        codes = []
        starts = list(range(0, len(traj) - snippet_len + 1, snippet_len))
        for s in starts:
            feats = snippet_features(traj, s, snippet_len)
            mask = np.ones((1, snippet_len), dtype=bool)
            z = cvqvae.encode(feats, mask, model)
            q, _ = cvqvae.quantize(z, model.codebook)
            codes.append(q)
        changes = [
            traj.first_frame + starts[i + 1]
            for i in range(len(codes) - 1)
            if codes[i] != codes[i + 1]
        ]
        results.append(changes)
    return results


# ---------------------------------------------------------------------------
# Detector scoring
# ---------------------------------------------------------------------------

def evaluate_detection(
    predicted: Sequence[tuple[int, Optional[CompositeLabel]]],
    truth: Sequence[tuple[int, CompositeLabel]],
    window: int = 50,
    match_labels: bool = True,
) -> DetectionMatch:
    """Greedy one-to-one temporal matching of predictions to truth windows.

    A prediction inside an unmatched truth window (|frame - center| <=
    window/2) whose label matches (when label matching is enabled) is a TP;
    other predictions are FP; unmatched truths are FN.
    """
    half = window / 2.0
    truths = sorted(truth, key=lambda t: t[0])
    matched = [False] * len(truths)
    tp = fp = 0
    for frame, label in sorted(predicted, key=lambda p: (p[0], 0 if p[1] is None else p[1].to_index())):
        hit = None
        for i, (center, true_label) in enumerate(truths):
            if matched[i] or abs(frame - center) > half:
                continue
            if match_labels and label is not None and label != true_label:
                continue
            hit = i
            break
        if hit is None:
            fp += 1
        else:
            matched[hit] = True
            tp += 1
    fn = matched.count(False)
    return DetectionMatch(tp=tp, fp=fp, fn=fn)


# ---------------------------------------------------------------------------
# Ground-truth annotation and change-point files (CSV)
# ---------------------------------------------------------------------------

ANNOTATION_COLUMNS = ("recording_id", "vehicle_id", "window_center_frame", "composite_label")


def write_annotations(
    rows: Sequence[tuple[str, int, int, CompositeLabel]], path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_COLUMNS)
        for recording_id, vehicle_id, center, label in rows:
            writer.writerow([recording_id, vehicle_id, center, label.to_string()])


def read_annotations(path) -> list[tuple[str, int, int, CompositeLabel]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            (
                row["recording_id"],
                int(row["vehicle_id"]),
                int(row["window_center_frame"]),
                CompositeLabel.from_string(row["composite_label"]),
            )
            for row in reader
        ]


def write_change_points(
    rows: Sequence[tuple[str, int, ChangePoint]], path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "vehicle_id", "t_c", "label_before", "label_after"])
        for recording_id, vehicle_id, cp in rows:
            writer.writerow(
                [
                    recording_id,
                    vehicle_id,
                    cp.t_c,
                    cp.label_before.to_string(),
                    cp.label_after.to_string(),
                ]
            )


def read_change_points(path) -> list[tuple[str, int, ChangePoint]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            (
                row["recording_id"],
                int(row["vehicle_id"]),
                ChangePoint(
                    t_c=int(row["t_c"]),
                    label_before=CompositeLabel.from_string(row["label_before"]),
                    label_after=CompositeLabel.from_string(row["label_after"]),
                ),
            )
            for row in reader
        ]
