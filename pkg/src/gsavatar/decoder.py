"""Latent-conditioned residual decoder and its stage-1 training.

The decoder is a small MLP mapping (subject code w, per-Gaussian embedding
e_k) to the 59 parameter offsets of Gaussian k.  Stage 1 jointly optimizes
the MLP, one code per training subject, and the shared embeddings; the
output head starts at zero so iteration 0 reproduces the template exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsavatar.core.errors import ValidationError
from gsavatar.core.model import PARAMS_PER_GAUSSIAN, GaussianModel, ResidualSet, apply_residuals, apply_residuals_backward
from gsavatar.losses import LossWeights, decoder_loss
from gsavatar.optim import AdamState, adam_step
from gsavatar.render import RasterConfig, DEFAULT_CONFIG, RenderContext
from gsavatar.template import model_hash

CODE_DIM = 64
EMBED_DIM = 48
HIDDEN_DIM = 256
POS_ENC_FREQUENCIES = 8


def init_embeddings(template: GaussianModel, embed_dim: int = EMBED_DIM,
                    frequencies: int = POS_ENC_FREQUENCIES) -> np.ndarray:
    """Sinusoidal positional encoding of template positions, (K, embed_dim).

    Positions are normalized to [-1, 1]^3 by the template bounding box;
    per frequency j the block is [sin(2^j pi mu_hat), cos(2^j pi mu_hat)].
    """
    if embed_dim != 6 * frequencies:
        raise ValidationError(f"embed_dim must be 6*frequencies, got {embed_dim}")
    lo = template.positions.min(axis=0)
    hi = template.positions.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    normalized = 2.0 * (template.positions - lo) / span - 1.0
    blocks = []
    for j in range(frequencies):
        arg = (2.0 ** j) * np.pi * normalized
        blocks.append(np.sin(arg))
        blocks.append(np.cos(arg))
    return np.concatenate(blocks, axis=1)


@dataclass
class DecoderParams:
    """Two hidden ReLU layers; output head zero-initialized."""

    w1: np.ndarray  # (in, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray
    w3: np.ndarray  # (hidden, 59)
    b3: np.ndarray

    @classmethod
    def create(cls, code_dim: int = CODE_DIM, embed_dim: int = EMBED_DIM,
               hidden: int = HIDDEN_DIM, seed: int = 0) -> "DecoderParams":
        rng = np.random.default_rng(seed)
        d_in = code_dim + embed_dim
        w1 = rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, hidden))
        w2 = rng.normal(scale=np.sqrt(2.0 / hidden), size=(hidden, hidden))
        return cls(w1, np.zeros(hidden), w2, np.zeros(hidden),
                   np.zeros((hidden, PARAMS_PER_GAUSSIAN)),
                   np.zeros(PARAMS_PER_GAUSSIAN))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def arrays(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    @classmethod
    def from_flat(cls, flat: np.ndarray, d_in: int, hidden: int) -> "DecoderParams":
        shapes = [(d_in, hidden), (hidden,), (hidden, hidden), (hidden,),
                  (hidden, PARAMS_PER_GAUSSIAN), (PARAMS_PER_GAUSSIAN,)]
        arrays = []
        offset = 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(flat[offset:offset + size].reshape(shape))
            offset += size
        if offset != flat.size:
            raise ValidationError("flat decoder parameter length mismatch")
        return cls(*arrays)

    def copy(self) -> "DecoderParams":
        return DecoderParams(*(a.copy() for a in self.arrays()))


def decode_all(params: DecoderParams, code: np.ndarray,
               embeddings: np.ndarray) -> ResidualSet:
    """Residuals for every Gaussian: batched MLP forward."""
    mat, _ = decode_forward(params, code, embeddings)
    return ResidualSet.from_matrix(mat)


def decode(params: DecoderParams, code: np.ndarray,
           embedding: np.ndarray) -> np.ndarray:
    """Offsets for a single Gaussian (59 scalars)."""
    mat, _ = decode_forward(params, code, embedding[None, :])
    return mat[0]


def decode_forward(params: DecoderParams, code: np.ndarray, embeddings: np.ndarray):
    """Returns (offsets (K, 59), cache for backward)."""
    code = np.asarray(code, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    k = embeddings.shape[0]
    d_in = params.w1.shape[0]
    if code.ndim != 1 or code.size + embeddings.shape[1] != d_in:
        raise ValidationError(
            f"decoder input dim {code.size}+{embeddings.shape[1]} != {d_in}")
    x = np.concatenate([np.broadcast_to(code, (k, code.size)), embeddings], axis=1)
    z1 = x @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ params.w3 + params.b3
    return out, (x, z1, a1, z2, a2, code.size)


def decode_backward(params: DecoderParams, cache, grad_out: np.ndarray):
    """Gradients for (decoder params, code, embeddings) from d loss/d offsets."""
    x, z1, a1, z2, a2, code_dim = cache
    g_w3 = a2.T @ grad_out
    g_b3 = grad_out.sum(axis=0)
    g_a2 = grad_out @ params.w3.T
    g_z2 = g_a2 * (z2 > 0.0)
    g_w2 = a1.T @ g_z2
    g_b2 = g_z2.sum(axis=0)
    g_a1 = g_z2 @ params.w2.T
    g_z1 = g_a1 * (z1 > 0.0)
    g_w1 = x.T @ g_z1
    g_b1 = g_z1.sum(axis=0)
    g_x = g_z1 @ params.w1.T
    g_code = g_x[:, :code_dim].sum(axis=0)
    g_embed = g_x[:, code_dim:]
    g_params = DecoderParams(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)
    return g_params, g_code, g_embed


@dataclass
class DecoderTrainConfig:
    iters: int = 3000
    seed: int = 0
    code_dim: int = CODE_DIM
    embed_dim: int = EMBED_DIM
    hidden_dim: int = HIDDEN_DIM
    lr_theta: float = 1e-3
    lr_codes: float = 1e-2
    lr_embeddings: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    raster: RasterConfig = DEFAULT_CONFIG
    holdout_views: tuple[int, ...] = ()  # view indices excluded from training
    checkpoint_every: int = 200
    log_every: int = 0


@dataclass
class DecoderArtifacts:
    params: DecoderParams
    codes: dict[str, np.ndarray]  # subject id -> w
    embeddings: np.ndarray  # (K, embed_dim)
    template: GaussianModel
    loss_trace: list[float]
    config: DecoderTrainConfig

    def decode_model(self, code: np.ndarray, metadata: dict | None = None) -> GaussianModel:
        residuals = decode_all(self.params, code, self.embeddings)
        return apply_residuals(self.template, residuals, metadata=metadata)


def train_decoder(dataset, template: GaussianModel,
                  config: DecoderTrainConfig | None = None) -> DecoderArtifacts:
    """Stage 1: jointly fit the decoder MLP, per-subject codes, and Gaussian
    embeddings by rendering residual-decoded models against training views.

    `dataset` is a DatasetManifest; each step samples one (subject, view)
    pair, renders, and backpropagates through compositing, projection, the
    residual algebra, and the MLP.
    """
    config = config or DecoderTrainConfig()
    rng = np.random.default_rng(config.seed)
    subjects = dataset.subjects
    n = len(subjects)
    if n == 0:
        raise ValidationError("dataset has no subjects")

    params = DecoderParams.create(config.code_dim, config.embed_dim,
                                  config.hidden_dim, seed=config.seed)
    codes = rng.standard_normal((n, config.code_dim))
    embeddings = init_embeddings(template, config.embed_dim)

    theta_state = AdamState.for_params(params.flatten(), lr=config.lr_theta)
    code_state = AdamState.for_params(codes, lr=config.lr_codes)
    embed_state = AdamState.for_params(embeddings, lr=config.lr_embeddings)

    train_views = [v for v in range(dataset.n_views)
                   if v not in set(config.holdout_views)]
    if not train_views:
        raise ValidationError("holdout_views excludes every view")
    # preload images/cameras (desk-scale datasets fit in memory)
    view_cache = [[dataset.load_view(s, v) for v in train_views] for s in subjects]
    background = np.asarray(dataset.background, dtype=np.float64)

    d_in = config.code_dim + config.embed_dim
    trace: list[float] = []
    checkpoint = None
    theta_flat = params.flatten()

    for it in range(config.iters):
        si = int(rng.integers(n))
        vi = int(rng.integers(len(train_views)))
        image, cam = view_cache[si][vi]

        params = DecoderParams.from_flat(theta_flat, d_in, config.hidden_dim)
        offsets, cache = decode_forward(params, codes[si], embeddings)
        residuals = ResidualSet.from_matrix(offsets)
        model = apply_residuals(template, residuals)
        ctx = RenderContext(model, cam, config.raster)
        rendered, aux = ctx.forward(background)
        loss, grad_img, grad_dpos, grad_dscale = decoder_loss(
            image, rendered, residuals.d_position, residuals.d_scale,
            config.weights)
        if not np.isfinite(loss):
            if checkpoint is not None:
                theta_flat, codes, embeddings, trace_len = checkpoint
                trace = trace[:trace_len]
                break
            raise ValidationError(f"non-finite loss at iteration {it}")
        trace.append(float(loss))

        render_grads = ctx.backward(background, grad_img, aux)
        g_res = apply_residuals_backward(
            template, residuals, model,
            render_grads.positions, render_grads.scales,
            render_grads.rotations, render_grads.opacities, render_grads.sh)
        grad_mat = g_res.as_matrix()
        grad_mat[:, 0:3] += grad_dpos
        grad_mat[:, 3:6] += grad_dscale

        g_params, g_code, g_embed = decode_backward(params, cache, grad_mat)
        theta_flat = adam_step(theta_flat, g_params.flatten(), theta_state)
        g_codes = np.zeros_like(codes)
        g_codes[si] = g_code
        codes = adam_step(codes, g_codes, code_state)
        embeddings = adam_step(embeddings, g_embed, embed_state)

        if config.checkpoint_every and it % config.checkpoint_every == 0:
            checkpoint = (theta_flat.copy(), codes.copy(), embeddings.copy(), len(trace))
        if config.log_every and it % config.log_every == 0:
            print(f"[decoder] iter {it} loss {loss:.5f}")

    params = DecoderParams.from_flat(theta_flat, d_in, config.hidden_dim)
    code_map = {s.id: codes[i].copy() for i, s in enumerate(subjects)}
    return DecoderArtifacts(params, code_map, embeddings, template, trace, config)


DECODER_MAGIC = "gsavatar-decoder-v1"


def save_decoder(artifacts: DecoderArtifacts, path: str | Path) -> None:
    """Single-file artifact: zip with a JSON header and raw arrays."""
    header = {
        "format": DECODER_MAGIC,
        "arch": {"hidden": artifacts.params.w1.shape[1],
                 "layers": 2, "activation": "relu"},
        "code_dim": int(next(iter(artifacts.codes.values())).size) if artifacts.codes
                    else artifacts.config.code_dim,
        "embed_dim": int(artifacts.embeddings.shape[1]),
        "k": artifacts.template.k,
        "template_hash": model_hash(artifacts.template),
    }
    buf = io.BytesIO()
    np.savez(buf, w1=artifacts.params.w1, b1=artifacts.params.b1,
             w2=artifacts.params.w2, b2=artifacts.params.b2,
             w3=artifacts.params.w3, b3=artifacts.params.b3,
             embeddings=artifacts.embeddings,
             loss_trace=np.asarray(artifacts.loss_trace))
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("header.json", json.dumps(header))
        zf.writestr("arrays.npz", buf.getvalue())


def load_decoder(path: str | Path, template: GaussianModel) -> DecoderArtifacts:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != DECODER_MAGIC:
            raise ValidationError("not a decoder artifact")
        if header["k"] != template.k:
            raise ValidationError(
                f"decoder was trained for K={header['k']}, template has K={template.k}")
        if header["template_hash"] != model_hash(template):
            raise ValidationError("template hash does not match decoder artifact")
        with zf.open("arrays.npz") as fh:
            data = np.load(io.BytesIO(fh.read()))
            params = DecoderParams(data["w1"], data["b1"], data["w2"],
                                   data["b2"], data["w3"], data["b3"])
            embeddings = data["embeddings"]
            trace = [float(x) for x in data["loss_trace"]]
    config = DecoderTrainConfig(code_dim=int(header["code_dim"]),
                                embed_dim=int(header["embed_dim"]),
                                hidden_dim=int(header["arch"]["hidden"]))
    return DecoderArtifacts(params, {}, embeddings, template, trace, config)


def save_codes(codes: dict[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_text(json.dumps(
        {sid: w.tolist() for sid, w in codes.items()}))


def load_codes(path: str | Path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return {sid: np.asarray(w, dtype=np.float64) for sid, w in doc.items()}


def codes_hash(codes: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for sid in sorted(codes):
        h.update(sid.encode())
        h.update(np.ascontiguousarray(codes[sid]).tobytes())
    return h.hexdigest()[:16]
