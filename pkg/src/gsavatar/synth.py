"""Procedural multi-view dataset generator with exact ground truth.

Every subject's ground truth IS a Gaussian model (built by the same
landmark initialization the fitter uses, plus color/opacity assignment),
so recovery experiments have an attainable optimum and stored views can be
reproduced bit-for-bit up to PNG quantization.

Subjects share one sphere-topology base mesh (Fibonacci lattice +
convex-hull triangulation, any vertex count); identity varies through a
band-limited radial deformation field and a low-frequency color field.
Binary attributes perturb geometry ("bump": a compactly supported
protrusion toward the front) or appearance ("stripe": a color band at a
fixed latitude) so that labels come with exact spatial masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from gsavatar.core.camera import Camera, load_camera_json, orbit_camera, save_camera_json
from gsavatar.core.errors import ValidationError
from gsavatar.core.image import Image, load_image, save_image
from gsavatar.core.model import GaussianModel, load_model_json, save_model_json
from gsavatar.core.sh import rgb_to_band0, sh_basis
from gsavatar.fitting import LandmarkMesh, init_from_landmarks, load_mesh_json, save_mesh_json
from gsavatar.render import RasterConfig, DEFAULT_CONFIG, render

DEFAULT_VERTICES = 5072  # two Gaussians per vertex -> K = 10,144


@dataclass(frozen=True)
class BaseMesh:
    vertices: np.ndarray  # (V, 3) on the unit sphere
    faces: np.ndarray  # (F, 3) outward-wound triangles
    edges: np.ndarray  # (E, 2) unique undirected


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    theta = 2.0 * np.pi * i / golden
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def sphere_base_mesh(n_vertices: int = DEFAULT_VERTICES) -> BaseMesh:
    """Quasi-uniform sphere triangulation with an exact vertex count."""
    points = fibonacci_sphere(n_vertices)
    hull = ConvexHull(points)
    faces = hull.simplices.copy()
    # orient every face outward (the hull is star-convex around the origin)
    v0 = points[faces[:, 0]]
    v1 = points[faces[:, 1]]
    v2 = points[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    centroids = (v0 + v1 + v2) / 3.0
    flip = np.sum(normals * centroids, axis=1) < 0.0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return BaseMesh(points, faces, edges)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    face_n = np.cross(v1 - v0, v2 - v0)  # magnitude 2x area: area weighting
    normals = np.zeros_like(vertices)
    for col in range(3):
        np.add.at(normals, faces[:, col], face_n)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.where(lens > 0.0, lens, 1.0)


# compact C-infinity bump profile: exactly zero for |t| >= 1
def bump_profile(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    inside = t < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


BUMP_DIRECTION = np.array([0.0, 0.0, 1.0])  # frontal protrusion
BUMP_SUPPORT = 0.55  # radians
BUMP_AMPLITUDE = 0.3
STRIPE_CENTER_Y = -0.35  # latitude (unit-sphere y) of the color band
STRIPE_HALF_WIDTH = 0.25
STRIPE_SHIFT = np.array([0.3, -0.2, -0.12])

RADIAL_BAND_AMPLITUDES = (0.15, 0.2, 0.25)  # SH bands 0..2 of the shape field
COLOR_BAND_AMPLITUDE = 0.35
GT_OPACITY_RANGE = (0.8, 0.9)


def attribute_vertex_mask(base: BaseMesh, attribute: str) -> np.ndarray:
    """Vertices whose ground-truth parameters may depend on the attribute
    flag (support dilated by one ring for normal/edge effects)."""
    dirs = base.vertices
    if attribute == "bump":
        angle = np.arccos(np.clip(dirs @ BUMP_DIRECTION, -1.0, 1.0))
        core = angle < BUMP_SUPPORT
    elif attribute == "stripe":
        core = np.abs(dirs[:, 1] - STRIPE_CENTER_Y) < STRIPE_HALF_WIDTH
    else:
        raise ValidationError(f"unknown attribute {attribute!r}")
    dilated = core.copy()
    touched = core[base.edges[:, 0]] | core[base.edges[:, 1]]
    dilated[base.edges[touched, 0]] = True
    dilated[base.edges[touched, 1]] = True
    return dilated


def generate_subject(seed: int, base: BaseMesh,
                     attribute_flags: dict[str, int] | None = None
                     ) -> tuple[LandmarkMesh, GaussianModel, dict[str, int]]:
    """Deterministic subject: same seed, same subject; attribute flags only
    touch their masked regions."""
    flags = {"bump": -1, "stripe": -1}
    flags.update(attribute_flags or {})
    for name, value in flags.items():
        if value not in (-1, 1):
            raise ValidationError(f"attribute {name} must be +/-1, got {value}")

    rng = np.random.default_rng(seed)
    dirs = base.vertices
    basis = sh_basis(dirs)[:, :9]  # SH bands 0..2 of the deformation field

    # identity fields are drawn before attributes are applied, so flag
    # combinations share every random draw
    shape_coeffs = np.concatenate([
        rng.normal(scale=RADIAL_BAND_AMPLITUDES[0], size=1),
        rng.normal(scale=RADIAL_BAND_AMPLITUDES[1], size=3),
        rng.normal(scale=RADIAL_BAND_AMPLITUDES[2], size=5),
    ])
    color_coeffs = rng.normal(scale=COLOR_BAND_AMPLITUDE, size=(3, 9))
    opacity = rng.uniform(*GT_OPACITY_RANGE)

    radius = 1.0 + basis @ shape_coeffs
    if flags["bump"] > 0:
        angle = np.arccos(np.clip(dirs @ BUMP_DIRECTION, -1.0, 1.0))
        radius = radius + BUMP_AMPLITUDE * bump_profile(angle / BUMP_SUPPORT)
    radius = np.clip(radius, 0.4, None)
    vertices = dirs * radius[:, None]
    normals = vertex_normals(vertices, base.faces)
    mesh = LandmarkMesh(vertices, base.edges, normals)

    rgb = 0.5 + basis @ color_coeffs.T  # (V, 3)
    if flags["stripe"] > 0:
        w = bump_profile((dirs[:, 1] - STRIPE_CENTER_Y) / STRIPE_HALF_WIDTH)
        rgb = rgb + w[:, None] * STRIPE_SHIFT[None, :]
    rgb = np.clip(rgb, 0.08, 0.92)

    model = init_from_landmarks(mesh)
    sh = np.array(model.sh)
    sh[0::2, :, 0] = rgb_to_band0(rgb)
    sh[1::2, :, 0] = rgb_to_band0(rgb)
    gt = GaussianModel(model.positions, model.scales, model.rotations,
                       np.full(model.k, opacity), sh,
                       metadata={"seed": int(seed), "labels": flags})
    return mesh, gt, flags


def generate_cameras(n_views: int, radius: float = 2.7,
                     elevation_range: tuple[float, float] = (0.0, 20.0),
                     image_res: int = 128, focal: float | None = None) -> list[Camera]:
    """Cameras on a sphere segment looking at the origin: azimuths span
    -90..+90 degrees over (up to) two elevation rings."""
    if n_views < 1:
        raise ValidationError("need at least one view")
    f = focal if focal is not None else float(image_res)
    cams = []
    if n_views == 1:
        return [orbit_camera(0.0, elevation_range[0], radius, image_res, image_res, f)]
    n_low = (n_views + 1) // 2
    n_high = n_views - n_low
    for count, elevation in ((n_low, elevation_range[0]), (n_high, elevation_range[1])):
        if count == 0:
            continue
        azimuths = np.linspace(-90.0, 90.0, count) if count > 1 else np.array([0.0])
        for az in azimuths:
            cams.append(orbit_camera(float(az), float(elevation), radius,
                                     image_res, image_res, f))
    return cams


@dataclass
class DatasetConfig:
    n_subjects: int = 16
    n_views: int = 16
    image_res: int = 128
    mesh_vertices: int = DEFAULT_VERTICES
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    camera_radius: float = 2.7
    elevations: tuple[float, float] = (0.0, 20.0)
    float_images: bool = False  # lossless .npy instead of 8-bit PNG
    raster: RasterConfig = DEFAULT_CONFIG


@dataclass
class SubjectEntry:
    id: str
    landmark_file: str
    gt_model_file: str
    attribute_labels: dict[str, int]
    views: list[dict]  # {camera_file, image_file}


@dataclass
class DatasetManifest:
    root: Path
    n_views: int
    image_res: int
    background: tuple[float, float, float]
    seed: int
    mesh_vertices: int
    subjects: list[SubjectEntry] = field(default_factory=list)

    def subject(self, subject_id: str) -> SubjectEntry:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise ValidationError(f"unknown subject {subject_id!r}")

    def load_mesh(self, entry: SubjectEntry) -> LandmarkMesh:
        return load_mesh_json(self.root / entry.landmark_file)

    def load_gt_model(self, entry: SubjectEntry) -> GaussianModel:
        return load_model_json(self.root / entry.gt_model_file)

    def load_view(self, entry: SubjectEntry, v: int) -> tuple[Image, Camera]:
        view = entry.views[v]
        return (load_image(self.root / view["image_file"]),
                load_camera_json(self.root / view["camera_file"]))

    def to_dict(self) -> dict:
        return {
            "global": {
                "n_views": self.n_views, "image_res": self.image_res,
                "background": list(self.background), "seed": self.seed,
                "mesh_vertices": self.mesh_vertices,
            },
            "subjects": [{
                "id": s.id, "landmark_file": s.landmark_file,
                "gt_model_file": s.gt_model_file,
                "attribute_labels": s.attribute_labels, "views": s.views,
            } for s in self.subjects],
        }

    def save(self) -> None:
        (self.root / "manifest.json").write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text())
        g = doc["global"]
        manifest = cls(root, int(g["n_views"]), int(g["image_res"]),
                       tuple(g["background"]), int(g["seed"]),
                       int(g["mesh_vertices"]))
        for s in doc["subjects"]:
            manifest.subjects.append(SubjectEntry(
                s["id"], s["landmark_file"], s["gt_model_file"],
                {k: int(v) for k, v in s["attribute_labels"].items()}, s["views"]))
        return manifest

    def validate(self) -> None:
        """Every referenced file exists, topology shared, view count uniform."""
        signature = None
        for entry in self.subjects:
            for rel in [entry.landmark_file, entry.gt_model_file]:
                if not (self.root / rel).exists():
                    raise ValidationError(f"missing file {rel}")
            if len(entry.views) != self.n_views:
                raise ValidationError(
                    f"subject {entry.id} has {len(entry.views)} views, "
                    f"expected {self.n_views}")
            for view in entry.views:
                for rel in view.values():
                    if not (self.root / rel).exists():
                        raise ValidationError(f"missing file {rel}")
            mesh = self.load_mesh(entry)
            sig = mesh.topology_signature()
            if signature is None:
                signature = sig
            elif sig != signature:
                raise ValidationError(f"subject {entry.id} breaks shared topology")


def default_attribute_flags(index: int) -> dict[str, int]:
    """Deterministic balanced labels."""
    return {"bump": 1 if index % 2 else -1,
            "stripe": 1 if (index // 2) % 2 else -1}


def build_dataset(out_dir: str | Path, config: DatasetConfig) -> DatasetManifest:
    """Generate subjects, render all views, write files + manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    base = sphere_base_mesh(config.mesh_vertices)
    cameras = generate_cameras(config.n_views, config.camera_radius,
                               config.elevations, config.image_res)
    cam_dir = root / "cameras"
    cam_dir.mkdir(exist_ok=True)
    cam_files = []
    for v, cam in enumerate(cameras):
        rel = f"cameras/cam_{v:02d}.json"
        save_camera_json(cam, root / rel)
        cam_files.append(rel)

    manifest = DatasetManifest(root, config.n_views, config.image_res,
                               tuple(config.background), config.seed,
                               config.mesh_vertices)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_subjects)
    ext = "npy" if config.float_images else "png"
    for i in range(config.n_subjects):
        subject_id = f"s{i:03d}"
        sdir = root / "subjects" / subject_id
        sdir.mkdir(parents=True, exist_ok=True)
        subject_seed = int(seeds[i].generate_state(1)[0])
        mesh, gt, labels = generate_subject(subject_seed, base,
                                            default_attribute_flags(i))
        mesh_rel = f"subjects/{subject_id}/mesh.json"
        model_rel = f"subjects/{subject_id}/gt_model.json"
        save_mesh_json(mesh, root / mesh_rel)
        save_model_json(gt.with_metadata(subject_id=subject_id), root / model_rel)
        views = []
        for v, cam in enumerate(cameras):
            image = render(gt, cam, config.background, config.raster)
            img_rel = f"subjects/{subject_id}/view_{v:02d}.{ext}"
            save_image(image, root / img_rel)
            views.append({"camera_file": cam_files[v], "image_file": img_rel})
        manifest.subjects.append(SubjectEntry(subject_id, mesh_rel, model_rel,
                                              labels, views))
    manifest.save()
    return manifest
