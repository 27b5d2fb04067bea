"""Batch command-line interface for the reconstruction pipeline.

Every command is deterministic given its seeds: re-running an invocation
produces byte-identical outputs.  Failures exit nonzero with a message
naming the pipeline stage that failed.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import morphable, synth, views
from .config import ConfigError, load_config
from .field import MeshOracleField, rasterize_field
from .gcn import VcGcn, load_params, save_params, train_vcgcn
from .mcubes import marching_cubes
from .mesh import load_mesh, save_mesh
from .metrics import MetricReport, mpjpe, p2s, summary_block
from .morphable import (build_basis, explained_variance, interpolate,
                        load_basis, load_region_masks, pca_snap, project,
                        save_basis, save_region_masks, shape_variance)
from .registration import register_with_pca
from .spatial import SpatialIndex
from .voxel import VoxelGrid, load_voxel_grid, padded_bounds, save_voxel_grid


class StageError(click.ClickException):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")


def _stage(name):
    """Re-raise any stage failure with the stage name attached."""
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except click.ClickException:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        return wrapper
    return decorate


def _set_threads(threads):
    if threads is not None:
        import torch

        torch.set_num_threads(threads)


@click.group()
def main():
    """Topology-consistent head reconstruction toolkit."""


_common = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML pipeline configuration."),
    click.option("--out", "out_dir", type=click.Path(), required=True,
                 help="Output directory."),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--threads", type=int, default=None, help="Worker thread bound."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _load_cfg(config_path, seed):
    try:
        return load_config(config_path, {"seed": seed})
    except ConfigError as exc:
        raise StageError("config", exc) from exc


def _require(cfg, *names):
    try:
        cfg.require(*names)
    except ConfigError as exc:
        raise StageError("config", exc) from exc


def _outdir(out_dir):
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


@_stage("load-template")
def _template_and_ids(cfg):
    _require(cfg, "template", "landmark_ids")
    template = load_mesh(cfg.template)
    lm_ids = synth.load_landmark_ids(cfg.landmark_ids)
    if lm_ids.max() >= template.n_vertices:
        raise ValueError("landmark vertex id exceeds template size")
    return template, lm_ids


@main.command()
@common_options
@click.option("--target", "target_path", type=click.Path(exists=True), required=True,
              help="Target: a voxel grid file, or a mesh used as an occupancy oracle.")
@click.option("--resolution", type=int, default=None, help="Marching-cubes grid resolution.")
@click.option("--gt-landmarks", "gt_landmarks_path", type=click.Path(exists=True), default=None,
              help="3D landmark file for the detector stub (required for grid targets).")
@click.option("--no-refine", is_flag=True, help="Skip network landmark refinement.")
def reconstruct(config_path, out_dir, seed, threads, target_path, resolution,
                gt_landmarks_path, no_refine):
    """Full pipeline: surface extraction, landmarks, guided registration."""
    _set_threads(threads)
    cfg = _load_cfg(config_path, seed)
    if resolution is not None:
        cfg.resolution = resolution
    out = _outdir(out_dir)
    template, lm_ids = _template_and_ids(cfg)
    _require(cfg, "basis")
    basis = _load_basis_checked(cfg.basis, template)

    grid, target_mesh = _load_target(target_path, cfg)
    m_pifu = _extract(grid, cfg.iso)
    save_mesh(m_pifu, out / "m_pifu.obj")
    save_voxel_grid(grid, out / "occupancy.grid")

    scheme = views.default_scheme()
    if gt_landmarks_path is not None:
        L_true = _stage("load-landmarks")(views.load_landmarks3d)(gt_landmarks_path, scheme)
    elif target_mesh is not None and lm_ids.max() < target_mesh.n_vertices:
        L_true = target_mesh.vertices[lm_ids]
    else:
        raise StageError(
            "landmarks",
            "grid targets need --gt-landmarks for the detector stub")
    rig, L3d = _landmark_stage(cfg, scheme, m_pifu, L_true, no_refine, out)
    views.save_rig(rig, out / "rig.txt")
    views.save_landmarks3d(L3d, scheme.names, out / "landmarks3d.txt")

    result = _register_stage(template, m_pifu, lm_ids, L3d, basis, cfg)
    save_mesh(result.m_nicp, out / "m_nicp.obj")
    save_mesh(result.m_pca, out / "m_pca.obj")
    _write_diagnostics(result.diagnostics, out / "diagnostics.csv")
    click.echo(f"wrote {out}/m_pifu.obj, landmarks3d.txt, m_nicp.obj, m_pca.obj")


@_stage("load-target")
def _load_target(target_path, cfg):
    """(occupancy grid, oracle mesh or None) from a grid or mesh file."""
    if str(target_path).endswith(".grid"):
        return load_voxel_grid(target_path), None
    mesh = load_mesh(target_path)
    index = SpatialIndex(mesh)
    grid = VoxelGrid(*padded_bounds(mesh), (cfg.resolution,) * 3)
    return rasterize_field(MeshOracleField(mesh, index), grid), mesh


@_stage("extract-surface")
def _extract(grid, iso):
    mesh = marching_cubes(grid, iso)
    if mesh.n_faces == 0:
        raise ValueError("no surface at the requested iso level")
    return mesh


@_stage("landmarks")
def _landmark_stage(cfg, scheme, m_pifu, L_true, no_refine, out):
    rig = views.default_rig(m_pifu, image_size=(cfg.image_size,) * 2)
    P_hat = views.stub_detect_2d(L_true, rig, scheme, noise_px=cfg.noise_px, seed=cfg.seed)
    views.save_landmarks2d(P_hat, scheme, out / "landmarks2d.txt")
    index = SpatialIndex(m_pifu)
    L_init, per_view, _ = views.initialize_landmarks3D(m_pifu, index, P_hat, rig, scheme)
    if no_refine or cfg.gcn_params is None:
        return rig, L_init
    model = load_params(cfg.gcn_params, scheme)
    features = {
        v: np.concatenate(
            [synth.stub_node_features(P_hat[v], rig[v].image_size,
                                      model.cfg.feature_channels, seed=cfg.seed),
             per_view[v]], axis=1)
        for v in sorted(P_hat.keys())
    }
    return rig, model(features, L_init).detach().numpy()


@_stage("load-basis")
def _load_basis_checked(path, template):
    basis = load_basis(path)
    if basis.n_vertices != template.n_vertices:
        raise ValueError(
            f"basis has {basis.n_vertices} vertices, template {template.n_vertices}"
        )
    return basis


@_stage("register")
def _register_stage(template, target, lm_ids, L3d, basis, cfg):
    return register_with_pca(template, target, lm_ids, L3d, basis,
                             cfg.nicp, cfg.outer_rounds)


def _write_diagnostics(diagnostics, path):
    with open(path, "w") as fh:
        fh.write("round,p2s_nicp,p2s_pca,landmark_rms,pruned_fraction\n")
        for d in diagnostics:
            fh.write("%d,%.9g,%.9g,%.9g,%.9g\n" % (
                d["round"], d["p2s_nicp"], d["p2s_pca"],
                d["landmark_rms"], d["pruned_fraction"]))


@main.command()
@common_options
@click.option("--target", "target_path", type=click.Path(exists=True), required=True)
@click.option("--landmarks", "landmarks_path", type=click.Path(exists=True), required=True,
              help="Target 3D landmark file.")
def register(config_path, out_dir, seed, threads, target_path, landmarks_path):
    """Landmark-guided registration of the template onto a target mesh."""
    _set_threads(threads)
    cfg = _load_cfg(config_path, seed)
    out = _outdir(out_dir)
    template, lm_ids = _template_and_ids(cfg)
    _require(cfg, "basis")
    basis = _load_basis_checked(cfg.basis, template)
    target = _stage("load-target")(load_mesh)(target_path)
    scheme = views.default_scheme()
    L3d = _stage("load-landmarks")(views.load_landmarks3d)(landmarks_path, scheme)
    result = _register_stage(template, target, lm_ids, L3d, basis, cfg)
    save_mesh(result.m_nicp, out / "m_nicp.obj")
    save_mesh(result.m_pca, out / "m_pca.obj")
    _write_diagnostics(result.diagnostics, out / "diagnostics.csv")
    for d in result.diagnostics:
        click.echo("round %d: alpha-final p2s_nicp %.6g p2s_pca %.6g lm_rms %.6g pruned %.3g"
                   % (d["round"], d["p2s_nicp"], d["p2s_pca"],
                      d["landmark_rms"], d["pruned_fraction"]))


@main.command("build-basis")
@common_options
@click.argument("mesh_dir", type=click.Path(exists=True))
@click.option("-d", "dims", type=int, default=None, help="Basis dimension.")
@click.option("--variance-fraction", type=float, default=0.99,
              help="Pick d capturing this variance fraction when -d is absent.")
def build_basis_cmd(config_path, out_dir, seed, threads, mesh_dir, dims, variance_fraction):
    """PCA shape basis from a directory of topology-consistent meshes."""
    _set_threads(threads)
    out = _outdir(out_dir)
    paths = sorted(Path(mesh_dir).glob("*.obj"))
    if len(paths) < 2:
        raise StageError("load-corpus", f"need >= 2 meshes in {mesh_dir}")
    meshes = []
    for p in paths:
        try:
            meshes.append(load_mesh(p))
        except Exception as exc:
            raise StageError("load-corpus", f"{p}: {exc}") from exc
    ref = meshes[0]
    for p, m in zip(paths, meshes):
        if m.n_vertices != ref.n_vertices or not np.array_equal(m.faces, ref.faces):
            raise StageError("load-corpus", f"topology mismatch: {p}")
    try:
        eig, total = explained_variance(meshes)
        fractions = eig / total if total > 0 else np.zeros_like(eig)
        if dims is None:
            cum = np.cumsum(fractions)
            dims = int(np.searchsorted(cum, variance_fraction) + 1)
        basis = build_basis(meshes, dims)
    except Exception as exc:
        raise StageError("build-basis", exc) from exc
    save_basis(basis, out / "basis.bin")
    cum = np.cumsum(fractions)
    click.echo("component,explained_fraction,cumulative")
    for i in range(dims):
        click.echo("%d,%.6g,%.6g" % (i, fractions[i], cum[i]))
    click.echo(f"wrote {out}/basis.bin (d={dims})")


@main.command("detect-landmarks")
@common_options
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--landmarks2d", "landmarks2d_path", type=click.Path(exists=True), default=None,
              help="2D detections; omit with --stub to project ground truth.")
@click.option("--stub", is_flag=True, help="Stub the 2D detector from bound landmarks.")
@click.option("--no-refine", is_flag=True, help="Emit pure-projection landmarks.")
def detect_landmarks(config_path, out_dir, seed, threads, mesh_path,
                     landmarks2d_path, stub, no_refine):
    """Multi-view 3D landmark detection on a mesh."""
    _set_threads(threads)
    cfg = _load_cfg(config_path, seed)
    out = _outdir(out_dir)
    mesh = _stage("load-target")(load_mesh)(mesh_path)
    scheme = views.default_scheme()
    rig = views.default_rig(mesh, image_size=(cfg.image_size,) * 2)
    if stub:
        _require(cfg, "landmark_ids")
        lm_ids = synth.load_landmark_ids(cfg.landmark_ids)
        if lm_ids.max() >= mesh.n_vertices:
            raise StageError("landmarks", "landmark vertex id exceeds mesh size")
        P_hat = views.stub_detect_2d(mesh.vertices[lm_ids], rig, scheme,
                                     noise_px=cfg.noise_px, seed=cfg.seed)
    elif landmarks2d_path is not None:
        P_hat = _stage("load-landmarks")(views.load_landmarks2d)(landmarks2d_path, scheme)
    else:
        raise StageError("landmarks", "provide --landmarks2d FILE or --stub")
    index = SpatialIndex(mesh)
    stage = _stage("landmarks")
    L_init, per_view, _ = stage(views.initialize_landmarks3D)(mesh, index, P_hat, rig, scheme)
    L3d = L_init
    if not no_refine and cfg.gcn_params is not None:
        _require(cfg, "gcn_params")
        model = stage(load_params)(cfg.gcn_params, scheme)
        features = {
            v: np.concatenate(
                [synth.stub_node_features(P_hat[v], rig[v].image_size,
                                          model.cfg.feature_channels, seed=cfg.seed),
                 per_view[v]], axis=1)
            for v in sorted(P_hat.keys())
        }
        L3d = model(features, L_init).detach().numpy()
    views.save_landmarks3d(L3d, scheme.names, out / "landmarks3d.txt")
    views.save_landmarks2d(P_hat, scheme, out / "landmarks2d.txt")
    views.save_rig(rig, out / "rig.txt")
    click.echo(f"wrote {out}/landmarks3d.txt")


@main.command("eval")
@common_options
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--pred-landmarks", type=click.Path(exists=True), default=None)
@click.option("--gt-landmarks", type=click.Path(exists=True), default=None)
@click.option("--masks", "masks_path", type=click.Path(exists=True), default=None,
              help="Region mask file providing the 'face' region.")
@click.option("--no-align", is_flag=True, help="Skip Procrustes alignment.")
def eval_cmd(config_path, out_dir, seed, threads, pred_path, gt_path,
             pred_landmarks, gt_landmarks, masks_path, no_align):
    """Surface distance (head and face) and landmark error reports."""
    _set_threads(threads)
    out = _outdir(out_dir)
    stage = _stage("evaluate")
    pred = _stage("load-pred")(load_mesh)(pred_path)
    gt = _stage("load-gt")(load_mesh)(gt_path)
    align = not no_align
    reports = [MetricReport("p2s_head", stage(p2s)(pred, gt, align=align),
                            align, pred.n_vertices)]
    if masks_path is not None:
        masks = _stage("load-masks")(load_region_masks)(masks_path)
        if "face" not in masks:
            raise StageError("load-masks", f"{masks_path} has no 'face' region")
        face = masks["face"]
        if len(face) and face.max() >= pred.n_vertices:
            raise StageError("load-masks", "face mask exceeds prediction size")
        reports.append(MetricReport(
            "p2s_face", stage(p2s)(pred, gt, align=align, vertex_mask=face),
            align, len(face)))
    if pred_landmarks is not None and gt_landmarks is not None:
        scheme = views.default_scheme()
        lp = _stage("load-landmarks")(views.load_landmarks3d)(pred_landmarks, scheme)
        lg = _stage("load-landmarks")(views.load_landmarks3d)(gt_landmarks, scheme)
        root = scheme.names.index("nose_top")
        reports.append(MetricReport("mpjpe", stage(mpjpe)(lp, lg, root), False, len(lp)))
    text = summary_block(reports)
    (out / "report.csv").write_text(text + "\n")
    click.echo(text)


@main.command()
@common_options
@click.argument("mesh_dir", type=click.Path(exists=True))
@click.option("--masks", "masks_path", type=click.Path(exists=True), default=None)
def variance(config_path, out_dir, seed, threads, mesh_dir, masks_path):
    """Per-region shape variance over a topology-consistent corpus."""
    _set_threads(threads)
    out = _outdir(out_dir)
    paths = sorted(Path(mesh_dir).glob("*.obj"))
    if not paths:
        raise StageError("load-corpus", f"no meshes in {mesh_dir}")
    meshes = [_stage("load-corpus")(load_mesh)(p) for p in paths]
    regions = {"head": None}
    if masks_path is not None:
        regions.update(_stage("load-masks")(load_region_masks)(masks_path))
    lines = ["region,variance"]
    for name in sorted(regions.keys()):
        v = _stage("variance")(shape_variance)(meshes, regions[name])
        lines.append("%s,%.9g" % (name, v))
    (out / "variance.csv").write_text("\n".join(lines) + "\n")
    click.echo("\n".join(lines))


@main.command()
@common_options
@click.argument("mesh_a", type=click.Path(exists=True))
@click.argument("mesh_b", type=click.Path(exists=True))
@click.option("-t", "ts", type=float, multiple=True, default=(0.5,),
              help="Blend parameters; values outside [0,1] extrapolate.")
def interpolate_cmd(config_path, out_dir, seed, threads, mesh_a, mesh_b, ts):
    """Linear interpolation between two topology-consistent meshes."""
    _set_threads(threads)
    out = _outdir(out_dir)
    a = _stage("load-inputs")(load_mesh)(mesh_a)
    b = _stage("load-inputs")(load_mesh)(mesh_b)
    for t in ts:
        m = _stage("interpolate")(interpolate)(a, b, t)
        save_mesh(m, out / f"interp_{t:g}.obj")
    click.echo(f"wrote {len(ts)} mesh(es) to {out}")


@main.command("synth")
@common_options
@click.option("--count", type=int, default=20, help="Corpus size.")
@click.option("--rank", type=int, default=4, help="Blend-space rank.")
@click.option("--subdivisions", type=int, default=3, help="Template sphere subdivisions.")
@click.option("--train-gcn", is_flag=True,
              help="Also train refinement parameters on the corpus.")
def synth_cmd(config_path, out_dir, seed, threads, count, rank, subdivisions, train_gcn):
    """Deterministic synthetic corpus with ground-truth landmarks."""
    _set_threads(threads)
    cfg = _load_cfg(config_path, seed)
    out = _outdir(out_dir)
    stage = _stage("synthesize")
    spec = synth.SyntheticCorpusSpec(count=count, seed=cfg.seed, rank=rank,
                                     subdivisions=subdivisions)
    template, lm_ids, meshes, weights, _ = stage(synth.make_corpus)(spec)
    scheme = views.default_scheme()
    save_mesh(template, out / "template.obj")
    synth.save_landmark_ids(lm_ids, out / "landmark_ids.txt")
    save_region_masks(synth.region_masks(template), out / "region_masks.txt")
    heads = out / "heads"
    heads.mkdir(exist_ok=True)
    for k, m in enumerate(meshes):
        save_mesh(m, heads / f"head_{k:03d}.obj")
        views.save_landmarks3d(m.vertices[lm_ids], scheme.names,
                               heads / f"head_{k:03d}.landmarks3d.txt")
    with open(out / "blend_weights.csv", "w") as fh:
        fh.write("head," + ",".join(f"w{j}" for j in range(weights.shape[1])) + "\n")
        for k, w in enumerate(weights):
            fh.write(("%d," % k) + ",".join("%.17g" % x for x in w) + "\n")
    basis = stage(build_basis)(meshes, rank)
    save_basis(basis, out / "basis.bin")
    if train_gcn:
        samples = [
            stage(synth.make_gcn_sample)(
                m, lm_ids, scheme, views.default_rig(m, image_size=(cfg.image_size,) * 2),
                noise_px=cfg.noise_px, feature_channels=cfg.gcn.feature_channels,
                seed=cfg.seed + k)
            for k, m in enumerate(meshes)
        ]
        model = VcGcn(scheme, cfg.gcn)
        stage(train_vcgcn)(model, samples, cfg.train, cfg.loss_weights)
        save_params(model, out / "gcn_params.bin")
    click.echo(f"wrote corpus of {count} heads to {out}")


if __name__ == "__main__":
    main()
