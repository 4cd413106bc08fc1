#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import map_coordinates

log = logging.getLogger(__name__)

SCALE_RANGE = (0.8, 1.0)
RATIO_RANGE = (0.9, 1.1)
OFFSET_RANGE = (0.0, 1.0)
BRIGHTNESS_RANGE = (-0.2, 0.2)
CONTRAST_RANGE = (0.8, 1.2)
SATURATION_RANGE = (0.8, 1.2)
HUE_RANGE = (-0.1, 0.1)

# Rec.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


class AugMode(IntEnum):
    SYNCHRONIZED = 0
    DESYNCHRONIZED = 1


def _check_range(name, value, bounds):
    low, high = bounds
    if not low <= value <= high:
        raise ValueError(f'Augmentation {name}={value} outside [{low}, {high}].')


@dataclass(frozen=True)
class AugParams:
    """
    One draw of the photometric/geometric augmentation.

    `crop_offset` is the (row, col) position of the crop window inside the
    feasible slack, so (0.5, 0.5) centers it and the window never leaves the
    image. `hue_delta` is expressed in half-turns of the hue circle.
    """
    crop_scale: float = 1.0
    crop_ratio: float = 1.0
    crop_offset: tuple = (0.5, 0.5)
    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    saturation_factor: float = 1.0
    hue_delta: float = 0.0

    def __post_init__(self):
        _check_range('crop_scale', self.crop_scale, SCALE_RANGE)
        _check_range('crop_ratio', self.crop_ratio, RATIO_RANGE)
        for value in self.crop_offset:
            _check_range('crop_offset', value, OFFSET_RANGE)
        _check_range('brightness_delta', self.brightness_delta, BRIGHTNESS_RANGE)
        _check_range('contrast_factor', self.contrast_factor, CONTRAST_RANGE)
        _check_range('saturation_factor', self.saturation_factor, SATURATION_RANGE)
        _check_range('hue_delta', self.hue_delta, HUE_RANGE)

    def crop_size(self):
        """ Crop height and width as fractions of the image. """
        h = min(1.0, np.sqrt(self.crop_scale / self.crop_ratio))
        w = min(1.0, np.sqrt(self.crop_scale * self.crop_ratio))
        return h, w


def _lerp(bounds, u):
    low, high = bounds
    return float(low + (high - low) * u)


def sample_aug_params(rng) -> AugParams:
    """ Draws exactly eight uniforms, one per parameter, in application order. """
    u = rng.random(8)
    return AugParams(
        crop_scale=_lerp(SCALE_RANGE, u[0]),
        crop_ratio=_lerp(RATIO_RANGE, u[1]),
        crop_offset=(_lerp(OFFSET_RANGE, u[2]), _lerp(OFFSET_RANGE, u[3])),
        brightness_delta=_lerp(BRIGHTNESS_RANGE, u[4]),
        contrast_factor=_lerp(CONTRAST_RANGE, u[5]),
        saturation_factor=_lerp(SATURATION_RANGE, u[6]),
        hue_delta=_lerp(HUE_RANGE, u[7]))


def _crop_resize(image, params):
    height, width = image.shape[:2]
    h, w = params.crop_size()
    y0 = params.crop_offset[0] * (height - 1) * (1.0 - h)
    x0 = params.crop_offset[1] * (width - 1) * (1.0 - w)

    # Corner-aligned: output row i samples source row y0 + i * h
    rows = y0 + np.arange(height) * h
    cols = x0 + np.arange(width) * w
    rr, cc = np.meshgrid(rows, cols, indexing='ij')

    out = np.empty_like(image)
    for channel in range(image.shape[2]):
        out[..., channel] = map_coordinates(
            image[..., channel], [rr, cc], order=1, mode='nearest')
    return out


def apply_aug(image, params: AugParams):
    """
    Apply crop-resize, brightness, contrast, saturation and hue, in that order.

    Args:
        image (np.ndarray): H x W x 3 image with values in [0, 1]
        params (AugParams): augmentation draw

    Returns:
        np.ndarray: augmented image, same shape and dtype
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f'Expected an H x W x 3 image, got shape {image.shape}.')
    if not np.all(np.isfinite(image)):
        raise ValueError('Image contains non-finite pixel values.')

    out = _crop_resize(image, params)
    out = np.clip(out + params.brightness_delta, 0.0, 1.0)

    mean = float((out @ LUMA).mean())
    out = np.clip((out - mean) * params.contrast_factor + mean, 0.0, 1.0)

    gray = (out @ LUMA)[..., None]
    out = np.clip(gray + (out - gray) * params.saturation_factor, 0.0, 1.0)

    if params.hue_delta:
        hsv = rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + params.hue_delta / 2.0) % 1.0
        out = hsv_to_rgb(hsv)

    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def sample_pair_params(mode: AugMode, rng):
    """ Parameters for a (state, goal) pair: one shared draw or two independent. """
    params_s = sample_aug_params(rng)
    if mode == AugMode.SYNCHRONIZED:
        return params_s, params_s
    return params_s, sample_aug_params(rng)


def augment_pair(s, g, mode: AugMode, rng):
    params_s, params_g = sample_pair_params(mode, rng)
    return apply_aug(s, params_s), apply_aug(g, params_g)
