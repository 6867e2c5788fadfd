"""Landmark-anchored model initialization and per-subject multi-view fitting.

Initialization places two Gaussians per mesh vertex (the second pushed out
along the normal) with scales tied to local edge lengths and rotations
aligning the local z-axis to the vertex normal, so Gaussian index k has the
same anatomical meaning for every subject sharing the mesh topology.
Fitting runs Adam over an unconstrained reparameterization (log scales,
logit opacity, unnormalized quaternion) with K fixed; there is no
densification or pruning, which is what keeps cross-subject correspondence
alive for template averaging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsavatar.core.camera import Camera
from gsavatar.core.errors import ValidationError
from gsavatar.core.image import Image
from gsavatar.core.model import (
    PARAMS_PER_GAUSSIAN,
    GaussianModel,
    logit,
    quat_normalize,
    sigmoid,
)
from gsavatar.core.sh import rgb_to_band0
from gsavatar.losses import LossWeights, decoder_loss
from gsavatar.metrics import psnr
from gsavatar.optim import AdamState, adam_step, fit_lr_vector
from gsavatar.render import RasterConfig, DEFAULT_CONFIG, RenderContext, render


@dataclass(frozen=True)
class LandmarkMesh:
    """Shared-topology landmark mesh: the correspondence anchor.

    All subjects in a dataset must agree on vertex count and edge list;
    only vertex positions (and therefore normals) vary.
    """

    vertices: np.ndarray  # (V, 3)
    edges: np.ndarray  # (E, 2) int, undirected, i < j
    normals: np.ndarray  # (V, 3) unit

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64))
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("vertices must be (V, 3)")
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise ValidationError("edges must be (E, 2)")
        if self.normals.shape != self.vertices.shape:
            raise ValidationError("normals must match vertices")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def topology_signature(self) -> tuple:
        return (self.n_vertices, self.edges.shape[0],
                int(self.edges.sum()), hash(self.edges.tobytes()))


def save_mesh_json(mesh: LandmarkMesh, path: str | Path) -> None:
    Path(path).write_text(json.dumps({
        "vertices": mesh.vertices.tolist(),
        "edges": mesh.edges.tolist(),
        "normals": mesh.normals.tolist(),
    }))


def load_mesh_json(path: str | Path) -> LandmarkMesh:
    doc = json.loads(Path(path).read_text())
    return LandmarkMesh(np.asarray(doc["vertices"]), np.asarray(doc["edges"]),
                        np.asarray(doc["normals"]))


def quat_from_z_to(n: np.ndarray) -> np.ndarray:
    """Shortest-arc unit quaternion rotating (0,0,1) onto unit vector n."""
    z = np.array([0.0, 0.0, 1.0])
    d = float(np.dot(z, n))
    if d > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if d < -1.0 + 1e-12:
        # antipodal: 180 degrees about x
        return np.array([0.0, 1.0, 0.0, 0.0])
    axis = np.cross(z, n)
    q = np.concatenate([[1.0 + d], axis])
    return q / np.linalg.norm(q)


NORMAL_OFFSET_FACTOR = 0.25  # second Gaussian offset, fraction of mean edge length
SCALE_FACTOR = 0.5  # in-plane scale, fraction of mean edge length
NORMAL_SCALE_FACTOR = 0.1  # normal-axis scale relative to the in-plane scale
INIT_OPACITY = 0.5
INIT_GRAY = 0.5


def init_from_landmarks(mesh: LandmarkMesh) -> GaussianModel:
    """Two Gaussians per vertex; K = 2V, index order (2v, 2v+1)."""
    v = mesh.n_vertices
    edge_len = np.linalg.norm(
        mesh.vertices[mesh.edges[:, 0]] - mesh.vertices[mesh.edges[:, 1]], axis=1)
    incident_sum = np.zeros(v)
    incident_count = np.zeros(v)
    for col in (0, 1):
        np.add.at(incident_sum, mesh.edges[:, col], edge_len)
        np.add.at(incident_count, mesh.edges[:, col], 1.0)
    if np.any(incident_count == 0):
        bad = int(np.argmin(incident_count))
        raise ValidationError(f"vertex {bad} has no incident edges")
    mean_edge = incident_sum / incident_count

    k = 2 * v
    positions = np.empty((k, 3))
    positions[0::2] = mesh.vertices
    positions[1::2] = mesh.vertices + NORMAL_OFFSET_FACTOR * mean_edge[:, None] * mesh.normals

    in_plane = SCALE_FACTOR * mean_edge
    scales = np.empty((k, 3))
    scales[0::2, 0] = in_plane
    scales[0::2, 1] = in_plane
    scales[0::2, 2] = NORMAL_SCALE_FACTOR * in_plane
    scales[1::2] = scales[0::2]

    quats = np.empty((k, 4))
    for i in range(v):
        q = quat_from_z_to(mesh.normals[i])
        quats[2 * i] = q
        quats[2 * i + 1] = q

    opacities = np.full(k, INIT_OPACITY)
    sh = np.zeros((k, 3, 16))
    sh[:, :, 0] = rgb_to_band0(np.full(3, INIT_GRAY))
    return GaussianModel(positions, scales, quat_normalize(quats), opacities, sh)


@dataclass
class FitConfig:
    iters: int = 2000
    seed: int = 0
    weights: LossWeights = field(default_factory=lambda: LossWeights(
        perceptual=0.0, l1=0.8, ssim=0.2, reg_position=0.0, reg_scale=0.0))
    lr_positions: float = 1.6e-4
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    position_lr_decay: float = 0.01  # final/initial ratio, exponential on positions
    raster: RasterConfig = DEFAULT_CONFIG
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    log_every: int = 0  # 0 disables console logging


def model_to_unconstrained(model: GaussianModel) -> np.ndarray:
    """Model -> free parameter vector [mu, log s, q, logit(alpha), c]."""
    mat = np.empty((model.k, PARAMS_PER_GAUSSIAN))
    mat[:, 0:3] = model.positions
    mat[:, 3:6] = np.log(model.scales)
    mat[:, 6:10] = model.rotations
    mat[:, 10] = logit(np.clip(model.opacities, 1e-6, 1 - 1e-6))
    mat[:, 11:] = model.sh.reshape(model.k, 48)
    return mat.reshape(-1)


def unconstrained_to_model(vec: np.ndarray, k: int,
                           metadata: dict | None = None) -> GaussianModel:
    mat = vec.reshape(k, PARAMS_PER_GAUSSIAN)
    return GaussianModel(
        mat[:, 0:3], np.exp(mat[:, 3:6]), quat_normalize(mat[:, 6:10]),
        np.clip(sigmoid(mat[:, 10]), 1e-6, 1 - 1e-6),
        mat[:, 11:].reshape(k, 3, 16), metadata=metadata, validate=False)


def _chain_to_unconstrained(grads_flat: np.ndarray, vec: np.ndarray, k: int) -> np.ndarray:
    """Gradients w.r.t. activated parameters -> w.r.t. the free vector."""
    g = grads_flat.reshape(k, PARAMS_PER_GAUSSIAN).copy()
    mat = vec.reshape(k, PARAMS_PER_GAUSSIAN)
    # scales: s = exp(u) -> du = ds * s
    g[:, 3:6] *= np.exp(mat[:, 3:6])
    # opacity: a = sigmoid(u) -> du = da * a(1-a)
    a = sigmoid(mat[:, 10])
    g[:, 10] *= a * (1.0 - a)
    # rotation: renderer gradient already includes q/|q| normalization
    return g.reshape(-1)


def fit_subject(views: list[tuple[Image, Camera]], init: GaussianModel,
                config: FitConfig | None = None) -> GaussianModel:
    """Adam-fit a model to multi-view images: one random view per iteration,
    L1 + (1 - SSIM) objective, K and index order fixed throughout."""
    config = config or FitConfig()
    if len(views) < 2:
        raise ValidationError("fit_subject needs at least 2 views")
    k = init.k
    vec = model_to_unconstrained(init)
    lr = fit_lr_vector(k, config.lr_positions, config.lr_scales,
                       config.lr_rotations, config.lr_opacity, config.lr_sh)
    state = AdamState.for_params(vec, lr=lr)
    rng = np.random.default_rng(config.seed)
    pos_cols = np.zeros(k * PARAMS_PER_GAUSSIAN, dtype=bool)
    pos_cols.reshape(k, PARAMS_PER_GAUSSIAN)[:, 0:3] = True
    decay = config.position_lr_decay ** (1.0 / max(config.iters - 1, 1))

    background = np.asarray(config.background, dtype=np.float64)
    last_loss = math.nan
    for it in range(config.iters):
        image, cam = views[int(rng.integers(len(views)))]
        model = unconstrained_to_model(vec, k)
        ctx = RenderContext(model, cam, config.raster)
        rendered, aux = ctx.forward(background)
        loss, grad_img, _, _ = decoder_loss(
            image, rendered, np.zeros((1, 3)), np.zeros((1, 3)), config.weights)
        if not math.isfinite(loss):
            raise ValidationError(
                f"non-finite loss at iteration {it} (last good {last_loss})")
        grads = ctx.backward(background, grad_img, aux)
        g = _chain_to_unconstrained(grads.flat, vec, k)
        if isinstance(state.lr, np.ndarray):
            state.lr[pos_cols] = config.lr_positions * (decay ** it)
        vec = adam_step(vec, g, state)
        last_loss = loss
        if config.log_every and (it % config.log_every == 0):
            print(f"[fit] iter {it} loss {loss:.6f}")

    final = unconstrained_to_model(vec, k, metadata=dict(init.metadata))
    return final


def fit_subject_with_report(views, holdout, init,
                            config: FitConfig | None = None) -> tuple[GaussianModel, dict]:
    """fit_subject plus held-out PSNR bookkeeping for the metadata."""
    config = config or FitConfig()
    model = fit_subject(views, init, config)
    scores = [psnr(img.data, render(model, cam, config.background, config.raster).data)
              for img, cam in holdout]
    report = {"holdout_psnr": float(np.mean(scores)), "n_train_views": len(views)}
    return model.with_metadata(**report), report
