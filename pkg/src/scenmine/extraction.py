"""Scenario extraction: windowing around change points, neighbor slot
assignment, padding, pseudo-class labeling, augmentation, and splitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dgsfm
from .types import (
    FEATURE_NAMES,
    N_SLOTS,
    T_OBS,
    ChangePoint,
    InteractionMatrix,
    LatState,
    PseudoClassLabel,
    ScenarioRecord,
    ScenarioTensor,
    Trajectory,
)


class AugmentationError(Exception):
    """No free slot or no qualifying donor segment."""


@dataclass(frozen=True)
class ExtractionConfig:
    pre_frames: int = 50
    post_frames: int = 75
    tensor_offset: int = -25  # tensor start relative to t_c
    neighbor_radius: float = 100.0  # m, max anchor distance for slot candidates
    n_slots: int = N_SLOTS
    t_obs: int = T_OBS
    # optional set of (before-lateral, after-lateral) pairs to keep
    class_filter: Optional[frozenset[tuple[LatState, LatState]]] = None

    def __post_init__(self):
        if self.pre_frames + self.post_frames + 1 < self.t_obs:
            raise ValueError("extraction window must cover at least t_obs frames")
        if not (-self.pre_frames <= self.tensor_offset
                and self.tensor_offset + self.t_obs - 1 <= self.post_frames):
            raise ValueError("tensor window must lie inside the extraction window")


@dataclass(frozen=True)
class ExtractionSummary:
    extracted: int
    skipped_window: int
    filtered_class: int
    per_class_counts: dict[int, int]


def _slice_columns(traj: Trajectory, start_frame: int, length: int) -> dict[str, np.ndarray]:
    offset = start_frame - traj.first_frame
    cols = traj.arrays()
    return {name: cols[name][offset : offset + length] for name in FEATURE_NAMES}


def extract(
    trajectories: Sequence[Trajectory],
    change_points: dict[int, list[ChangePoint]],
    cfg: ExtractionConfig,
    dgsfm_cfg: Optional[dgsfm.DgsfmConfig] = None,
) -> tuple[list[ScenarioRecord], ExtractionSummary]:
    """Builds one ScenarioRecord per change point with full ego window
    coverage. Slots 1..N-1 hold the nearest other vehicles at the anchor
    (ascending distance); partially present vehicles are masked per frame;
    remaining slots are zero-padded pseudo-vehicles.
    """
    if dgsfm_cfg is None:
        dgsfm_cfg = dgsfm.DgsfmConfig(dt=trajectories[0].dt if trajectories else 0.04)
    by_id = {t.vehicle_id: t for t in trajectories}
    records: list[ScenarioRecord] = []
    skipped = 0
    filtered = 0
    per_class: dict[int, int] = {}

    for ego in trajectories:
        for cp in change_points.get(ego.vehicle_id, []):
            t_c = cp.t_c
            if not ego.covers(t_c - cfg.pre_frames, t_c + cfg.post_frames):
                skipped += 1
                continue
            if cfg.class_filter is not None and (
                cp.label_before.lateral,
                cp.label_after.lateral,
            ) not in cfg.class_filter:
                filtered += 1
                continue

            t0 = t_c + cfg.tensor_offset
            window = range(t0, t0 + cfg.t_obs)
            ego_anchor = ego.point_at(t_c)

            # Rank other vehicles by distance at the anchor; vehicles not
            # sampled at t_c use their sample closest to the anchor.
            candidates = []
            for other in trajectories:
                if other.vehicle_id == ego.vehicle_id or other.recording_id != ego.recording_id:
                    continue
                if other.last_frame < window.start or other.first_frame > window.stop - 1:
                    continue
                ref_frame = min(max(t_c, other.first_frame), other.last_frame)
                p = other.point_at(ref_frame)
                dist = math.hypot(p.x - ego_anchor.x, p.y - ego_anchor.y)
                if dist <= cfg.neighbor_radius:
                    candidates.append((dist, other.vehicle_id, other))
            candidates.sort(key=lambda c: (c[0], c[1]))
            neighbors = [c[2] for c in candidates[: cfg.n_slots - 1]]

            values = np.zeros((cfg.n_slots, len(FEATURE_NAMES), cfg.t_obs))
            mask = np.zeros((cfg.n_slots, cfg.t_obs), dtype=bool)
            positions = np.zeros((cfg.n_slots, cfg.t_obs, 2))
            velocities = np.zeros((cfg.n_slots, cfg.t_obs, 2))

            def fill(slot: int, traj: Trajectory) -> None:
                lo = max(window.start, traj.first_frame)
                hi = min(window.stop - 1, traj.last_frame)
                cols = _slice_columns(traj, lo, hi - lo + 1)
                sl = slice(lo - window.start, hi - window.start + 1)
                for f, name in enumerate(FEATURE_NAMES):
                    values[slot, f, sl] = cols[name]
                values[slot, 0, sl] -= ego_anchor.x
                values[slot, 1, sl] -= ego_anchor.y
                mask[slot, sl] = True
                positions[slot, sl, 0] = cols["x"]
                positions[slot, sl, 1] = cols["y"]
                velocities[slot, sl, 0] = cols["vx"]
                velocities[slot, sl, 1] = cols["vy"]

            fill(0, ego)
            for slot, nb in enumerate(neighbors, start=1):
                fill(slot, nb)

            interaction = dgsfm.interaction_scores(
                positions[0],
                velocities[0],
                positions[1:],
                velocities[1:],
                mask[1:],
                dgsfm_cfg,
            )
            class_index = cp.label_after.to_index()
            per_class[class_index] = per_class.get(class_index, 0) + 1
            records.append(
                ScenarioRecord(
                    tensor=ScenarioTensor(values, mask),
                    pseudo_class=PseudoClassLabel.from_index(class_index),
                    interaction=interaction,
                    anchor=cp,
                    recording_id=ego.recording_id,
                    vehicle_id=ego.vehicle_id,
                    record_id=ScenarioRecord.make_record_id(
                        ego.recording_id, ego.vehicle_id, t_c
                    ),
                )
            )

    summary = ExtractionSummary(
        extracted=len(records),
        skipped_window=skipped,
        filtered_class=filtered,
        per_class_counts=dict(sorted(per_class.items())),
    )
    return records, summary


def _donor_segment_starts(donor: Trajectory, length: int, max_abs_ay: float = 0.1) -> list[int]:
    cols = donor.arrays()
    ok = (np.abs(cols["ay"]) < max_abs_ay) & (cols["lane_id"] == cols["lane_id"][0])
    starts = []
    for s in range(len(donor) - length + 1):
        if ok[s : s + length].all() and (cols["lane_id"][s : s + length] == cols["lane_id"][s]).all():
            starts.append(s)
    return starts


def augment_irrelevant(
    record: ScenarioRecord,
    donor: Trajectory,
    min_gap: float = 80.0,
    seed: int = 0,
) -> ScenarioRecord:
    """Inserts an irrelevant constant-velocity donor vehicle into a free slot,
    translated beyond min_gap from the ego at every frame, with its
    interaction row fixed to 0. Everything else is copied unchanged.
    """
    mask = record.tensor.presence_mask
    free_slots = [s for s in range(1, N_SLOTS) if not mask[s].any()]
    if not free_slots:
        raise AugmentationError("no free pseudo-vehicle slot available")
    if not mask[1:].any():
        raise AugmentationError(
            "record has no present neighbor; inserting a zero-interaction row "
            "would break the framewise normalization invariant"
        )
    starts = _donor_segment_starts(donor, T_OBS)
    if not starts:
        raise AugmentationError(
            f"donor {donor.vehicle_id} has no steady {T_OBS}-frame segment"
        )
    rng = np.random.default_rng(seed)
    start = starts[int(rng.integers(len(starts)))]
    slot = free_slots[0]

    cols = _slice_columns(donor, donor.first_frame + start, T_OBS)
    ego_x = record.tensor.values[0, 0, :]
    ego_y = record.tensor.values[0, 1, :]
    # Shift the donor ahead of the ego along x so the gap clears min_gap at
    # every frame (y offset 0: distance is dominated by x).
    x_offset = float(np.max(ego_x - cols["x"])) + min_gap + 1.0
    y_offset = float(-cols["y"][0])

    values = record.tensor.values.copy()
    new_mask = mask.copy()
    for f, name in enumerate(FEATURE_NAMES):
        values[slot, f, :] = cols[name]
    values[slot, 0, :] += x_offset
    values[slot, 1, :] += y_offset
    new_mask[slot, :] = True

    interaction = record.interaction.values.copy()
    interaction[slot, :] = 0.0

    return ScenarioRecord(
        tensor=ScenarioTensor(values, new_mask),
        pseudo_class=record.pseudo_class,
        interaction=InteractionMatrix(interaction),
        anchor=record.anchor,
        recording_id=record.recording_id,
        vehicle_id=record.vehicle_id,
        record_id=record.record_id + ":aug",
        augmentation_parent=record.record_id,
    )


def split(
    records: Sequence[ScenarioRecord],
    train_fraction: float = 0.85,
    seed: int = 0,
) -> tuple[list[ScenarioRecord], list[ScenarioRecord]]:
    """Deterministic shuffle-split; augmented records follow their parent."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    parents = [r for r in records if r.augmentation_parent is None]
    children: dict[str, list[ScenarioRecord]] = {}
    for r in records:
        if r.augmentation_parent is not None:
            children.setdefault(r.augmentation_parent, []).append(r)

    order = np.random.default_rng(seed).permutation(len(parents))
    n_train = math.ceil(train_fraction * len(parents))
    train: list[ScenarioRecord] = []
    val: list[ScenarioRecord] = []
    for rank, idx in enumerate(order):
        parent = parents[idx]
        bucket = train if rank < n_train else val
        bucket.append(parent)
        bucket.extend(children.get(parent.record_id, []))
    return train, val
