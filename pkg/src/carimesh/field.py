"""Occupancy fields: mesh oracle, sampled grid and a pixel-aligned predictor.

The predictor is a small MLP over (bilinearly sampled image feature, view
depth) with a logistic output, trained by full-batch gradient descent on the
mean-squared occupancy error.  Image feature grids come from outside (files
or synthetic stubs); no image encoder lives here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .mesh import MeshError, face_normals
from .spatial import point_in_mesh
from .voxel import VoxelGrid, padded_bounds

_FEAT_MAGIC = "carimesh-featurevolume 1"


class OccupancyField:
    """Evaluatable occupancy over camera-space points, values in [0, 1]."""

    def evaluate(self, points):
        raise NotImplementedError


class MeshOracleField(OccupancyField):
    """Binary ground-truth occupancy f*: 1 inside the watertight mesh."""

    def __init__(self, mesh, index):
        self.mesh = mesh
        self.index = index

    def evaluate(self, points):
        return point_in_mesh(np.atleast_2d(points), self.mesh, self.index).astype(np.float64)


class GridField(OccupancyField):
    def __init__(self, grid: VoxelGrid):
        self.grid = grid

    def evaluate(self, points):
        return np.clip(self.grid.trilinear(points), 0.0, 1.0)


@dataclass
class FeatureVolumeInput:
    """View-aligned C-channel feature lattice plus its orthographic camera.

    feature_grid[i, j] is the feature at pixel (u=i, v=j); samples outside
    the lattice clamp to the border.
    """

    feature_grid: np.ndarray  # (W, H, C)
    camera: object  # ViewCamera

    def __post_init__(self):
        self.feature_grid = np.asarray(self.feature_grid, dtype=np.float64)
        if self.feature_grid.ndim != 3 or self.feature_grid.shape[2] < 1:
            raise ValueError("feature grid must be (W, H, C) with C >= 1")

    @property
    def channels(self):
        return self.feature_grid.shape[2]

    def sample(self, uv):
        """Bilinear feature lookup at pixel coordinates (n, 2)."""
        g = self.feature_grid
        w, h = g.shape[0], g.shape[1]
        u = np.clip(uv[:, 0], 0.0, w - 1.0)
        v = np.clip(uv[:, 1], 0.0, h - 1.0)
        i0 = np.minimum(u.astype(np.int64), w - 2) if w > 1 else np.zeros(len(u), np.int64)
        j0 = np.minimum(v.astype(np.int64), h - 2) if h > 1 else np.zeros(len(v), np.int64)
        fu = (u - i0)[:, None]
        fv = (v - j0)[:, None]
        i1 = np.minimum(i0 + 1, w - 1)
        j1 = np.minimum(j0 + 1, h - 1)
        return ((g[i0, j0] * (1 - fu) + g[i1, j0] * fu) * (1 - fv)
                + (g[i0, j1] * (1 - fu) + g[i1, j1] * fu) * fv)


def pixel_aligned_feature(finput, points):
    """(feature, depth) of 3D points under the input's view.

    Projects orthographically, bilinearly samples the feature grid (border
    clamped) and returns the view depth as the extra coordinate.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    uvd = finput.camera.project(p)
    return finput.sample(uvd[:, :2]), uvd[:, 2]


class OccupancyPredictor(torch.nn.Module):
    """MLP over (feature, depth) with logistic output in (0, 1)."""

    def __init__(self, in_channels, hidden=(32, 32), seed=0):
        super().__init__()
        self.in_channels = in_channels
        gen = torch.Generator().manual_seed(seed)
        sizes = [in_channels + 1] + list(hidden) + [1]
        layers = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lin = torch.nn.Linear(a, b, dtype=torch.float64)
            bound = np.sqrt(6.0 / (a + b))
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.zero_()
            layers.append(lin)
        self.layers = torch.nn.ModuleList(layers)

    def forward(self, x):
        if x.shape[-1] != self.in_channels + 1:
            raise ValueError(
                f"predictor expects {self.in_channels + 1} inputs, got {x.shape[-1]}"
            )
        for lin in self.layers[:-1]:
            x = torch.nn.functional.leaky_relu(lin(x), negative_slope=0.01)
        return torch.sigmoid(self.layers[-1](x)).squeeze(-1)


class PredictorField(OccupancyField):
    def __init__(self, predictor, finput):
        self.predictor = predictor
        self.finput = finput

    def evaluate(self, points):
        return predict_occupancy(self.predictor, self.finput, points)


def predict_occupancy(predictor, finput, points):
    feat, z = pixel_aligned_feature(finput, points)
    x = torch.from_numpy(np.concatenate([feat, z[:, None]], axis=1))
    with torch.no_grad():
        out = predictor(x)
    return out.numpy()


def occupancy_loss(predictions, labels):
    """Mean squared occupancy error (1/n) sum |f - f*|^2."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    g = np.asarray(labels, dtype=np.float64).ravel()
    if p.size == 0 or p.size != g.size:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    return float(np.mean((p - g) ** 2))


def sample_training_points(mesh, index, n_surface, n_uniform, sigma, seed=0):
    """Occupancy training samples: noisy surface points plus box-uniform ones.

    Surface points are area-weighted, perturbed by isotropic Gaussian noise
    of std ``sigma``; uniform points fill the 10 percent padded bounding
    box.  Every point is labeled by the watertight-mesh oracle.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if not mesh.is_watertight():
        raise MeshError("training-point sampling requires a watertight mesh")
    rng = np.random.default_rng(seed)
    pts = []
    if n_surface > 0:
        areas = 0.5 * np.linalg.norm(face_normals(mesh, normalize=False), axis=1)
        fi = rng.choice(mesh.n_faces, size=n_surface, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(n_surface))
        r2 = rng.random(n_surface)
        tri = mesh.vertices[mesh.faces[fi]]
        on_surf = (tri[:, 0] * (1 - r1)[:, None]
                   + tri[:, 1] * (r1 * (1 - r2))[:, None]
                   + tri[:, 2] * (r1 * r2)[:, None])
        pts.append(on_surf + rng.normal(scale=sigma, size=(n_surface, 3)) if sigma > 0 else on_surf)
    if n_uniform > 0:
        lo, hi = padded_bounds(mesh, 0.1)
        pts.append(lo + rng.random((n_uniform, 3)) * (hi - lo))
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    labels = point_in_mesh(points, mesh, index).astype(np.float64)
    return points, labels


@dataclass
class OptimizerConfig:
    optimizer: str = "rmsprop"  # or "adam"
    learning_rate: float = 1e-3
    epochs: int = 500
    cosine_decay: bool = False
    seed: int = 0


class DivergenceError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


def _make_optimizer(params, cfg):
    if cfg.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=cfg.learning_rate)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def train_occupancy(predictor, finput, samples, cfg=None):
    """Full-batch training on (points, labels); returns the loss trace.

    The predictor is updated in place; non-finite losses raise
    DivergenceError with the epoch index.
    """
    cfg = cfg or OptimizerConfig()
    points, labels = samples
    if len(points) == 0:
        raise ValueError("no training samples")
    torch.manual_seed(cfg.seed)
    feat, z = pixel_aligned_feature(finput, points)
    x = torch.from_numpy(np.concatenate([feat, z[:, None]], axis=1))
    y = torch.from_numpy(np.asarray(labels, dtype=np.float64))
    opt = _make_optimizer(predictor.parameters(), cfg)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
             if cfg.cosine_decay else None)
    trace = []
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        loss = torch.mean((predictor(x) - y) ** 2)
        if not torch.isfinite(loss):
            raise DivergenceError(epoch)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        trace.append(float(loss.detach()))
    return trace


def rasterize_field(fld, grid_spec, chunk=65536):
    """Sample a field at every lattice node of a VoxelGrid spec."""
    grid = VoxelGrid(grid_spec.min_corner, grid_spec.max_corner, grid_spec.resolution)
    nodes = grid.node_positions()
    vals = np.empty(len(nodes))
    for s in range(0, len(nodes), chunk):
        vals[s: s + chunk] = fld.evaluate(nodes[s: s + chunk])
    grid.set_flat_values(vals)
    return grid


def save_feature_volume(finput, path):
    from .views import save_rig  # local import to avoid a cycle at module load

    with open(path, "wb") as fh:
        g = finput.feature_grid
        cam = finput.camera
        header = (
            f"{_FEAT_MAGIC}\n"
            f"size {g.shape[0]} {g.shape[1]} {g.shape[2]}\n"
            f"view {cam.view_id}\n"
            "rotation " + " ".join("%.17g" % x for x in cam.rotation.ravel()) + "\n"
            "translation " + " ".join("%.17g" % x for x in cam.translation) + "\n"
            f"scale {cam.scale:.17g}\n"
            f"image_size {cam.image_size[0]} {cam.image_size[1]}\n"
            "data\n"
        )
        fh.write(header.encode("ascii"))
        fh.write(g.astype("<f8").tobytes())


def load_feature_volume(path):
    from .views import ViewCamera

    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != _FEAT_MAGIC:
            raise ValueError(f"{path}: not a feature volume file")
        fields = {}
        for _ in range(6):
            parts = fh.readline().decode("ascii").split()
            fields[parts[0]] = parts[1:]
        if fh.readline().decode("ascii").strip() != "data":
            raise ValueError(f"{path}: missing data marker")
        w, h, c = (int(x) for x in fields["size"])
        grid = np.frombuffer(fh.read(8 * w * h * c), dtype="<f8").reshape(w, h, c)
        cam = ViewCamera(
            fields["view"][0],
            np.array([float(x) for x in fields["rotation"]]).reshape(3, 3),
            np.array([float(x) for x in fields["translation"]]),
            float(fields["scale"][0]),
            (int(fields["image_size"][0]), int(fields["image_size"][1])),
        )
        return FeatureVolumeInput(grid.copy(), cam)
