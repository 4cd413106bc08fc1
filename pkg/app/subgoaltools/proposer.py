#!/usr/bin/python
# -*- coding: utf-8 -*-

import json
import logging

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import uniform_filter

from .world import (
    IMAGE_SIZE, VOCABULARY, Instruction, WorldError, expert_action, instruction_from_token,
    referents_present, render, step)

log = logging.getLogger(__name__)

CLIP_LENGTH = 16
# Drift magnitudes at severity 1, beyond the training augmentation ranges
HUE_DRIFT = (0.15, 0.3)
BRIGHTNESS_DRIFT = (0.25, 0.35)
BLUR_BLEND = 0.5
PATCH_SIZE = (3, 6)


class ProposalMode(IntEnum):
    IMAGE = 0
    VIDEO = 1


class Provenance(IntEnum):
    ON_TASK = 0
    OFF_TASK = 1
    UNKNOWN = 2


class ManifestError(ValueError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f'{message}: {self.path}')


@dataclass(frozen=True)
class SubgoalCandidate:
    """
    A proposed subgoal: one image (IMAGE mode) or a clip of future frames
    (VIDEO mode). Provenance and the instruction actually followed are only
    known for surrogate proposals and are read by evaluation code alone.
    """
    frames: np.ndarray
    mode: ProposalMode
    provenance: Provenance = Provenance.UNKNOWN
    actual_token: Optional[int] = None
    severity: float = 0.0

    @property
    def image(self):
        return self.frames[0]

    @property
    def goal_image(self):
        """ Image scored by the filter: the image itself or the clip's final frame. """
        return self.frames[-1]

    @property
    def clip(self):
        return self.frames


@dataclass(frozen=True)
class ProposerConfig:
    mode: ProposalMode = ProposalMode.IMAGE
    k: int = 8
    off_task_prob: float = 0.0
    severity_min: float = 0.0
    severity_max: float = 0.0
    horizon: int = 20
    clip_length: int = CLIP_LENGTH

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f'At least one candidate is required: k={self.k}')
        if not 0.0 <= self.off_task_prob <= 1.0:
            raise ValueError(f'Invalid off-task probability: {self.off_task_prob}')
        if not 0.0 <= self.severity_min <= self.severity_max <= 1.0:
            raise ValueError(f'Invalid severity range: '
                             f'[{self.severity_min}, {self.severity_max}]')
        if self.horizon < 1 or self.clip_length < 1:
            raise ValueError('Subgoal horizon and clip length must be positive.')

    @property
    def lookahead(self):
        return self.horizon if self.mode == ProposalMode.IMAGE else self.clip_length


@dataclass(frozen=True)
class ArtifactParams:
    hue_shift: float = 0.0
    brightness_shift: float = 0.0
    blur: float = 0.0
    patch: Optional[tuple] = None


def off_task_instructions(state, instruction: Instruction):
    """ Vocabulary instructions other than `instruction` achievable in this scene. """
    return [other for other in VOCABULARY
            if other != instruction and referents_present(state, other)]


def expert_future(state, instruction: Instruction, steps, final_only=False):
    """ Rendered frames of the next `steps` noise-free expert states. """
    frames = []
    for index in range(steps):
        state = step(state, expert_action(state, instruction))
        if not final_only or index == steps - 1:
            frames.append(render(state))
    return np.stack(frames)


def _drift(rng, magnitude):
    """ Random sign, magnitude uniform in the given range. """
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return sign * rng.uniform(*magnitude)


def sample_artifact_params(severity, rng) -> ArtifactParams:
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f'Artifact severity outside [0, 1]: {severity}')
    if severity == 0.0:
        return ArtifactParams()

    hue_shift = _drift(rng, HUE_DRIFT) * severity
    brightness_shift = _drift(rng, BRIGHTNESS_DRIFT) * severity
    patch = None
    if rng.random() < severity / 2.0:
        size = int(rng.integers(PATCH_SIZE[0], PATCH_SIZE[1] + 1))
        row, col = rng.integers(0, IMAGE_SIZE - size + 1, size=2)
        patch = (int(row), int(col), size, tuple(float(c) for c in rng.random(3)))
    return ArtifactParams(hue_shift, brightness_shift, BLUR_BLEND * severity, patch)


def apply_artifacts(image, params: ArtifactParams):
    out = np.asarray(image, dtype=np.float64)
    if params.hue_shift:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + params.hue_shift / 2.0) % 1.0
        out = hsv_to_rgb(hsv)
    out = np.clip(out + params.brightness_shift, 0.0, 1.0)
    if params.blur:
        blurred = uniform_filter(out, size=(3, 3, 1), mode='nearest')
        out = (1.0 - params.blur) * out + params.blur * blurred
    if params.patch is not None:
        row, col, size, color = params.patch
        out[row:row + size, col:col + size] = color
    return np.clip(out, 0.0, 1.0).astype(np.asarray(image).dtype)


def inject_artifacts(image, severity, rng):
    """ Generative-model-like corruption of one image; severity 0 is the identity. """
    params = sample_artifact_params(severity, rng)
    if params == ArtifactParams():
        return np.array(image, copy=True)
    return apply_artifacts(image, params)


def inject_artifacts_clip(frames, severity, rng):
    """ Same artifact draw applied to every frame of a clip. """
    params = sample_artifact_params(severity, rng)
    if params == ArtifactParams():
        return np.array(frames, copy=True)
    return np.stack([apply_artifacts(frame, params) for frame in frames])


def propose(config: ProposerConfig, state, instruction: Instruction, rng):
    """
    Surrogate subgoal proposer.

    Each candidate independently follows `instruction` or, with probability
    `off_task_prob`, another achievable instruction; it is the rendered
    expert future `lookahead` steps ahead, corrupted with artifacts of a
    severity drawn from [severity_min, severity_max].
    """
    futures = {}
    candidates = []
    for _ in range(config.k):
        actual, provenance = instruction, Provenance.ON_TASK
        if config.off_task_prob and rng.random() < config.off_task_prob:
            choices = off_task_instructions(state, instruction)
            if not choices:
                raise WorldError(f'No off-task instruction available for "{instruction}".')
            actual = choices[int(rng.integers(len(choices)))]
            provenance = Provenance.OFF_TASK

        if actual not in futures:
            futures[actual] = expert_future(state, actual, config.lookahead,
                                            final_only=config.mode == ProposalMode.IMAGE)
        frames = futures[actual]

        severity = float(rng.uniform(config.severity_min, config.severity_max)) \
            if config.severity_max > config.severity_min else config.severity_min
        frames = inject_artifacts_clip(frames, severity, rng)
        candidates.append(SubgoalCandidate(frames, config.mode, provenance,
                                           actual.token, severity))
    return candidates


###############################################################################
# External candidates
# Manifest: {"instruction": token, "mode": "image"|"video", "candidates": [...],
#            "env_seed": reset seed of the scene the candidates were proposed for}
# Image candidates are raw little-endian float32 H x W x 3 files; video
# candidates are directories of 16 such files ordered by name.
###############################################################################

@dataclass(frozen=True)
class Manifest:
    instruction: Instruction
    mode: ProposalMode
    paths: tuple
    env_seed: int = 0
    path: Optional[Path] = None


def write_raw_image(path, image):
    Path(path).write_bytes(np.ascontiguousarray(image, dtype='<f4').tobytes())


def read_raw_image(path, shape=(IMAGE_SIZE, IMAGE_SIZE, 3)):
    path = Path(path)
    if not path.is_file():
        raise ManifestError(path, 'Missing candidate image')
    data = path.read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(data) != expected:
        raise ManifestError(path, f'Expected {expected} bytes for shape {shape}, '
                                  f'found {len(data)}')
    return np.frombuffer(data, dtype='<f4').reshape(shape).astype(np.float32)


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        content = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(path, f'Unreadable manifest ({e})') from e

    try:
        instruction = instruction_from_token(content['instruction'])
        mode = ProposalMode[str(content['mode']).upper()]
        entries = list(content['candidates'])
        env_seed = int(content.get('env_seed', 0))
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(path, f'Invalid manifest ({e})') from e
    if not entries:
        raise ManifestError(path, 'Manifest lists no candidates')

    paths = tuple(path.parent / entry for entry in entries)
    return Manifest(instruction, mode, paths, env_seed, path)


def load_external_candidates(manifest_path, shape=(IMAGE_SIZE, IMAGE_SIZE, 3),
                             clip_length=CLIP_LENGTH):
    """
    Load subgoal candidates produced outside the lab.

    Returns:
        list: SubgoalCandidate with unknown provenance, in manifest order
    """
    manifest = read_manifest(manifest_path)
    candidates = []
    for path in manifest.paths:
        if manifest.mode == ProposalMode.IMAGE:
            frames = read_raw_image(path, shape)[None]
        else:
            if not path.is_dir():
                raise ManifestError(path, 'Missing candidate clip directory')
            files = sorted(p for p in path.iterdir() if p.is_file())
            if len(files) != clip_length:
                raise ManifestError(path, f'expected {clip_length} frames, '
                                          f'found {len(files)}')
            frames = np.stack([read_raw_image(f, shape) for f in files])
        candidates.append(SubgoalCandidate(frames, manifest.mode))

    log.info('Loaded %d external %s candidates from: %s', len(candidates),
             manifest.mode.name.lower(), manifest_path)
    return candidates


class ManifestSource:
    """
    Candidate source serving the subgoals listed in a manifest, for the
    instruction and scene they were proposed for.
    """

    def __init__(self, manifest_path, clip_length=CLIP_LENGTH):
        self.manifest = read_manifest(manifest_path)
        self.candidates = load_external_candidates(manifest_path, clip_length=clip_length)

    @property
    def mode(self):
        return self.manifest.mode

    def __call__(self, state, instruction, rng):
        if instruction != self.manifest.instruction:
            raise ManifestError(self.manifest.path,
                                f'Candidates were proposed for "{self.manifest.instruction}", '
                                f'not "{instruction}"')
        return list(self.candidates)
