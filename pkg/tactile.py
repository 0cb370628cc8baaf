"""Simulated fingertip touch: force/pose extraction, delay filter, rescaling, noise and masking."""
import numpy as np

from classes import RawContact, TactileFrame
from constants import (
    VALIDATION_ERRORS, contact_force_threshold, contact_surface_tolerance, fingertip_radius, force_ema_alpha,
    force_max, force_min, force_noise_std, force_scale, num_fingers, pose_limit, pose_noise_std, pose_scale,
    sensor_roll_offsets_deg,
)
from errors import InputDomainError

FORCE_CEILING = force_scale * force_max
POSE_CEILING = pose_scale * pose_limit


def binary_contact(force):
    return (np.linalg.norm(np.asarray(force, dtype=np.float64), axis=-1) > contact_force_threshold).astype(int)


def ema_force(force, previous, alpha=force_ema_alpha):
    return alpha * np.asarray(force, dtype=np.float64) + (1.0 - alpha) * np.asarray(previous, dtype=np.float64)


def clip_rescale_force(magnitude):
    return force_scale * np.clip(magnitude, force_min, force_max)


def clip_rescale_pose(pose):
    return pose_scale * np.clip(pose, -pose_limit, pose_limit)


def _pose_angles(local, radius):
    local = np.asarray(local, dtype=np.float64)
    ratio = np.clip(local[..., 0] / radius, -1.0, 1.0)
    r_y = np.arcsin(ratio)
    r_x = np.arctan2(-local[..., 1], local[..., 2])
    return np.clip(np.stack([r_x, r_y], axis=-1), -pose_limit, pose_limit)


def contact_pose_from_local(c_local, tip_radius=fingertip_radius, tolerance=contact_surface_tolerance):
    """(R_x, R_y) of a point on the sensing dome; R_x turns about the fingertip x axis, R_y about y."""
    c_local = np.asarray(c_local, dtype=np.float64)
    error = abs(float(np.linalg.norm(c_local)) - tip_radius)
    if error > tolerance:
        raise InputDomainError(VALIDATION_ERRORS['OFF_SURFACE'].format(error=error))
    r_x, r_y = _pose_angles(c_local, tip_radius)
    return float(r_x), float(r_y)


def _rotate_roll(local, roll_deg):
    angle = -np.deg2rad(roll_deg)
    c, s = np.cos(angle), np.sin(angle)
    x = c * local[..., 0] - s * local[..., 1]
    y = s * local[..., 0] + c * local[..., 1]
    return np.stack([x, y, local[..., 2]], axis=-1)


def raw_contacts_from_records(records, roll_offsets_deg=sensor_roll_offsets_deg):
    """Fingertip contact records mapped into the four sensor frames."""
    raw = [RawContact() for _ in range(num_fingers)]
    for record in records:
        if not record.is_tip:
            continue
        local = _rotate_roll(record.local_position, roll_offsets_deg[record.finger])
        raw[record.finger] = RawContact(force=record.force, local_position=local)
    return raw


def assemble_arrays(force, local, present, prev_filtered, prev_pose, rng=None,
                    pose_noise=pose_noise_std, force_noise=force_noise_std, tip_radius=fingertip_radius):
    """Batched tactile pipeline over (..., fingers) arrays.

    Returns (contact, pose, force magnitude, filtered force). Fingers without
    a fresh local position keep the previous emitted pose.
    """
    filtered = ema_force(force, prev_filtered)
    contact = binary_contact(filtered)
    magnitude = clip_rescale_force(np.linalg.norm(filtered, axis=-1))
    fresh = clip_rescale_pose(_pose_angles(local, tip_radius))
    pose = np.where(np.asarray(present, dtype=bool)[..., None], fresh, prev_pose)
    if rng is not None:
        pose = pose + rng.normal(0.0, pose_noise, size=pose.shape)
        magnitude = magnitude + rng.normal(0.0, force_noise, size=magnitude.shape)
    pose = np.clip(pose, -POSE_CEILING, POSE_CEILING)
    magnitude = np.clip(magnitude, 0.0, FORCE_CEILING)
    mask = contact.astype(np.float64)
    return mask, pose * mask[..., None], magnitude * mask, filtered


def assemble_tactile(raw, prev: TactileFrame, noise_rng=None, pose_noise=pose_noise_std,
                     force_noise=force_noise_std, tip_radius=fingertip_radius) -> TactileFrame:
    force = np.stack([contact.force for contact in raw])
    present = np.array([contact.local_position is not None for contact in raw])
    local = np.stack([
        contact.local_position if contact.local_position is not None else np.array([0.0, 0.0, tip_radius])
        for contact in raw
    ])
    contact, pose, magnitude, filtered = assemble_arrays(
        force, local, present, prev.filtered_force, prev.pose, noise_rng, pose_noise, force_noise, tip_radius,
    )
    return TactileFrame(contact=contact, pose=pose, force=magnitude, filtered_force=filtered)
