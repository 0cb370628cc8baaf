"""
Synthetic marker-grid tactile images and the SSIM contact detector.

Images are (135, 240) float arrays in [0, 1]: bright Gaussian markers on a
dark background. Pressing the sensor pushes markers radially away from the
contact center; the contact center follows the contact pose.
"""
import numpy as np
from scipy import ndimage
from skimage.filters import threshold_local
from skimage.metrics import structural_similarity

from constants import (
    VALIDATION_ERRORS, deformation_radius_per_newton, deformation_radius_px, image_background, image_noise_std,
    marker_amplitude, marker_max_shift_px, marker_shift_per_newton, marker_sigma_px, marker_spacing_px,
    median_aperture, num_fingers, pose_shift_px_per_rad, ssim_contact_threshold, ssim_gaussian_sigma,
    tactile_image_height, tactile_image_width, threshold_block_size, threshold_offset,
)
from errors import InputDomainError

IMAGE_SHAPE = (tactile_image_height, tactile_image_width)


def marker_grid():
    rows = np.arange(marker_spacing_px / 2, tactile_image_height, marker_spacing_px)
    cols = np.arange(marker_spacing_px / 2, tactile_image_width, marker_spacing_px)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing='ij')
    return np.stack([grid_r.ravel(), grid_c.ravel()], axis=-1)


def contact_center(pose):
    r_x, r_y = pose
    center_r = 0.5 * tactile_image_height + pose_shift_px_per_rad * r_x
    center_c = 0.5 * tactile_image_width + pose_shift_px_per_rad * r_y
    return np.array([center_r, center_c])


def marker_displacements(pose, force):
    """Per-marker (row, col) displacement in pixels for a contact."""
    markers = marker_grid()
    force = max(float(force), 0.0)
    shift = min(marker_shift_per_newton * force, marker_max_shift_px)
    radius = deformation_radius_px + deformation_radius_per_newton * force
    offset = markers - contact_center(pose)
    distance = np.linalg.norm(offset, axis=-1)
    taper = np.clip(1.0 - (distance / radius) ** 2, 0.0, None)
    direction = offset / np.maximum(distance, 1.0)[:, None]
    return shift * taper[:, None] * direction


def _draw(markers):
    rows = np.arange(tactile_image_height)[:, None, None]
    cols = np.arange(tactile_image_width)[None, :, None]
    sq = (rows - markers[:, 0]) ** 2 + (cols - markers[:, 1]) ** 2
    blobs = marker_amplitude * np.exp(-sq / (2.0 * marker_sigma_px ** 2)).sum(axis=-1)
    return np.clip(image_background + blobs, 0.0, 1.0)


def reference_image():
    return _draw(marker_grid())


def render_synthetic_tactile(pose, force, rng=None, noise_std=image_noise_std):
    image = _draw(marker_grid() + marker_displacements(pose, force))
    if rng is not None and noise_std > 0:
        image = np.clip(image + rng.normal(0.0, noise_std, size=image.shape), 0.0, 1.0)
    return image


def _check_shape(image):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != IMAGE_SHAPE:
        raise InputDomainError(VALIDATION_ERRORS['IMAGE_SIZE'].format(expected=IMAGE_SHAPE, got=image.shape))
    return image


def preprocess(image):
    """Median blur followed by a local-mean adaptive threshold; returns a binary float image."""
    blurred = ndimage.median_filter(_check_shape(image), size=median_aperture, mode='nearest')
    threshold = threshold_local(blurred, block_size=threshold_block_size, method='mean', offset=threshold_offset)
    return (blurred > threshold).astype(np.float64)


def image_similarity(a, b):
    return float(structural_similarity(
        _check_shape(a), _check_shape(b), data_range=1.0, gaussian_weights=True,
        sigma=ssim_gaussian_sigma, use_sample_covariance=False,
    ))


def image_binary_contact(image, reference):
    score = image_similarity(preprocess(image), preprocess(reference))
    return int(score < ssim_contact_threshold)


def frame_images(row, rng=None):
    """One synthetic image per finger from a recorded step's Rx/Ry/F columns."""
    return [
        render_synthetic_tactile((row[f'Rx{i + 1}'], row[f'Ry{i + 1}']), row[f'F{i + 1}'], rng)
        for i in range(num_fingers)
    ]
