"""Command-line pipeline driver.

Subcommands: synth (write a synthetic scene), depth (per-view plane-sweep
depth + confidence), fuse (depth maps to point cloud), eval (cloud metrics),
ablate (K/cost/aggregation grid with selection-frequency diagnostics), and
check-gradients (finite-difference validation of the analytic loss gradient).

Reports are flat key=value or TSV files; every report path also renders
matplotlib figures alongside. Failures exit nonzero with a single-line
``error: ...`` message and never leave partially written outputs (all files
go through write-to-temp plus atomic rename).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import evaluation, fusion, loss, plots, sweep, synth
from .geometry import Camera, CameraFileError, depth_hypotheses, load_camera
from .imaging import load_image, read_pfm, write_pfm


@dataclass
class PipelineConfig:
    """Flat pipeline configuration; file keys and CLI flags share names."""

    scene_dir: str = ""
    output_dir: str = ""
    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.0067
    views: int = 6                 # M, non-reference views in the loss
    topk: int = 3                  # K, per-pixel selections
    huber_delta: float = 0.2
    ssim_window: int = 3
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2
    num_depths: int = 128          # D, plane-sweep hypotheses
    temperature: float = 0.0       # 0 = data-driven
    aggregation: str = "topk"
    cost: str = "first_order"
    support_window: int = 3
    confidence_threshold: float = 0.8
    depth_tolerance: float = 0.01
    reprojection_tolerance: float = 1.0
    min_consistent_views: int = 3
    refine_steps: int = 0
    refine_step_size: float = 1.0
    threads: int = 1
    seed: int = 0
    target_angle: float = 10.0
    ply_ascii: bool = False

    def loss_config(self, n_views: int | None = None) -> loss.LossConfig:
        m = self.views if n_views is None else n_views
        return loss.LossConfig(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma,
            M=m, K=min(self.topk, m), huber_delta=self.huber_delta,
            ssim_window=self.ssim_window, ssim_c1=self.ssim_c1,
            ssim_c2=self.ssim_c2,
        )

    def fusion_config(self) -> fusion.FusionConfig:
        return fusion.FusionConfig(
            depth_tolerance=self.depth_tolerance,
            reprojection_tolerance=self.reprojection_tolerance,
            min_consistent_views=self.min_consistent_views,
        )


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` config file ('#' starts a comment)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def build_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    valid = {f.name: f.type for f in fields(PipelineConfig)}
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            if key not in valid:
                raise ValueError(f"unknown config key '{key}'")
            cfg = _set_field(cfg, key, value)
    for key in valid:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg = replace(cfg, **{key: flag})
    return cfg


def _set_field(cfg: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    current = getattr(cfg, key)
    if isinstance(current, bool):
        value: object = raw.strip().lower() in ("1", "true", "yes", "on")
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    else:
        value = raw
    return replace(cfg, **{key: value})


# --- scene directory loading ---------------------------------------------------


@dataclass
class SceneData:
    names: list[str]
    images: list[np.ndarray]
    cameras: list[Camera]
    gt_depths: list[np.ndarray] | None


def load_scene_dir(scene_dir: str | Path, num_depths: int) -> SceneData:
    """Load images + cameras (+ ground-truth depths when present)."""
    root = Path(scene_dir)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"scene image directory not found: {images_dir}")
    names = sorted(p.stem for p in images_dir.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no PNG images in {images_dir}")
    images = []
    cameras = []
    for name in names:
        img_path = images_dir / f"{name}.png"
        img = load_image(img_path)
        cam_path = root / "cams" / f"{name}_cam.txt"
        if not cam_path.is_file():
            raise FileNotFoundError(f"camera file not found: {cam_path}")
        h, w = img.shape[:2]
        cameras.append(load_camera(cam_path, width=w, height=h, num_depths=num_depths))
        images.append(img)
    gt_dir = root / "gt_depths"
    gt = None
    if gt_dir.is_dir():
        gt = []
        for name in names:
            pfm = gt_dir / f"{name}.pfm"
            if not pfm.is_file():
                raise FileNotFoundError(f"ground-truth depth not found: {pfm}")
            gt.append(read_pfm(pfm))
    return SceneData(names=names, images=images, cameras=cameras, gt_depths=gt)


# --- atomic output helpers -------------------------------------------------------


def _atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    _atomic_write(path, lambda p: p.write_text(text))


# --- subcommands -----------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    scene = synth.make_ablation_scene(
        args.kind, seed=args.seed, width=args.width, height=args.height
    )
    out = Path(args.out)
    synth.write_scene_dir(scene, out, num_depths=args.num_depths)
    print(f"wrote scene '{args.kind}' with {len(scene.cameras)} views to {out}")
    return 0


def _depth_one_view(
    scene: SceneData, ref: int, cfg: PipelineConfig
) -> tuple[np.ndarray, np.ndarray, loss.TotalLossResult, list[int]]:
    cams = scene.cameras
    n_others = len(cams) - 1
    selected = sweep.select_views(
        cams, ref, min(cfg.views, n_others), target_angle=cfg.target_angle
    )
    views = [(scene.images[i], cams[i]) for i in selected]
    lcfg = cfg.loss_config(len(views))
    hyps = depth_hypotheses(cams[ref], cfg.num_depths)
    volume = sweep.build_cost_volume(
        scene.images[ref], views, cams[ref], hyps, lcfg,
        aggregation=cfg.aggregation, cost_kind=cfg.cost,
        support_window=cfg.support_window,
    )
    temp = None if cfg.temperature <= 0 else cfg.temperature
    depth, prob = sweep.soft_argmin_depth(volume, temperature=temp)
    conf = sweep.confidence_map(prob, depth, hyps, threshold=cfg.confidence_threshold)
    if cfg.refine_steps > 0:
        depth = sweep.refine_depth_descent(
            scene.images[ref], cams[ref], views, depth, lcfg,
            steps=cfg.refine_steps, step_size=cfg.refine_step_size,
        )
    breakdown = loss.total_loss(scene.images[ref], cams[ref], views, depth, lcfg)
    return depth, conf.confidence, breakdown, selected


def cmd_depth(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if not cfg.scene_dir:
        raise ValueError("depth requires --scene_dir")
    if not cfg.output_dir:
        raise ValueError("depth requires --output_dir")
    scene = load_scene_dir(cfg.scene_dir, cfg.num_depths)
    if len(scene.cameras) < 2:
        raise ValueError("depth inference needs at least 2 views")
    out = Path(cfg.output_dir)
    for sub in ("depths", "conf", "reports", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    refs = list(range(len(scene.names)))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda r: _depth_one_view(scene, r, cfg), refs))
    else:
        results = [_depth_one_view(scene, r, cfg) for r in refs]

    for ref, (depth, conf, breakdown, selected) in zip(refs, results):
        name = scene.names[ref]
        _atomic_write(out / "depths" / f"{name}.pfm", lambda p, d=depth: write_pfm(p, d))
        _atomic_write(out / "conf" / f"{name}.pfm", lambda p, c=conf: write_pfm(p, c))
        report = loss.format_breakdown(breakdown)
        report += f"selected_views = {','.join(str(v) for v in selected)}\n"
        _write_text(out / "reports" / f"{name}_loss.txt", report)
        plots.save_depth_figure(depth, out / "figures" / f"{name}_depth.png",
                                title=f"depth view {name}")
        plots.save_confidence_figure(conf, out / "figures" / f"{name}_conf.png",
                                     cfg.confidence_threshold)
        print(f"view {name}: depth range [{depth[depth > 0].min():.4g}, "
              f"{depth.max():.4g}], mean confidence {conf.mean():.3f}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if not cfg.scene_dir:
        raise ValueError("fuse requires --scene_dir")
    if not cfg.output_dir:
        raise ValueError("fuse requires --output_dir")
    depth_dir = Path(args.depth_dir) if args.depth_dir else Path(cfg.output_dir) / "depths"
    conf_dir = Path(args.conf_dir) if args.conf_dir else Path(cfg.output_dir) / "conf"
    if not depth_dir.is_dir() or not list(depth_dir.glob("*.pfm")):
        raise FileNotFoundError(f"no depth maps found in {depth_dir}")
    scene = load_scene_dir(cfg.scene_dir, cfg.num_depths)
    depths = []
    confs = []
    for name in scene.names:
        pfm = depth_dir / f"{name}.pfm"
        if not pfm.is_file():
            raise FileNotFoundError(f"depth map not found: {pfm}")
        depths.append(read_pfm(pfm))
        cpath = conf_dir / f"{name}.pfm"
        confs.append(read_pfm(cpath) if cpath.is_file() else None)
    have_conf = all(c is not None for c in confs)
    cloud, stats = fusion.fuse(
        depths, scene.cameras, scene.images, cfg.fusion_config(),
        confidences=confs if have_conf else None,
        confidence_threshold=cfg.confidence_threshold,
    )
    out = Path(cfg.output_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    ply_path = out / "cloud.ply"
    _atomic_write(ply_path, lambda p: fusion.save_ply(p, cloud, ascii_format=cfg.ply_ascii))
    _write_text(out / "reports" / "fusion_stats.txt", "\n".join(stats.lines()) + "\n")
    plots.save_support_histogram(cloud.support, out / "figures" / "fusion_support.png")
    print(f"fused {len(cloud)} points from {len(depths)} views -> {ply_path}")
    if len(cloud) == 0:
        print("warning: fused cloud is empty; see fusion_stats.txt for rejections")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    recon = fusion.load_ply(args.reconstruction)
    ref = fusion.load_ply(args.reference)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else [1.0, 2.0, 3.0]
    metrics = evaluation.cloud_distance_metrics(recon, ref, thresholds)
    lines = metrics.lines()
    for line in lines:
        print(line)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        (out / "reports").mkdir(parents=True, exist_ok=True)
        (out / "figures").mkdir(parents=True, exist_ok=True)
        _write_text(out / "reports" / "metrics.txt", "\n".join(lines) + "\n")
        tsv = ["threshold\tprecision\trecall\tf_score"]
        tsv += [
            f"{t:g}\t{p:.9g}\t{r:.9g}\t{f:.9g}"
            for t, p, r, f in zip(metrics.thresholds, metrics.precision,
                                  metrics.recall, metrics.f_score)
        ]
        _write_text(out / "reports" / "metrics.tsv", "\n".join(tsv) + "\n")
        plots.save_precision_recall_figure(
            metrics.thresholds, metrics.precision, metrics.recall,
            metrics.f_score, out / "figures" / "precision_recall.png",
        )
    return 0


def _ablate_k_values(m: int) -> list[int]:
    return sorted(set([1, max(1, m // 2), m]))


def run_ablation(cfg: PipelineConfig, scene: SceneData,
                 ref_views: Sequence[int]) -> tuple[list[dict], np.ndarray]:
    """Depth-validation metrics over the (cost, aggregation, K) grid plus the
    top-K selection-frequency histogram at the default operating point."""
    if scene.gt_depths is None:
        raise ValueError("ablation requires ground-truth depths in the scene directory")
    rows: list[dict] = []
    selections = []
    m_limit = min(cfg.views, len(scene.cameras) - 1)
    k_values = _ablate_k_values(m_limit)
    freq = np.zeros(m_limit, dtype=np.int64)
    for ref in ref_views:
        selected = sweep.select_views(scene.cameras, ref, m_limit,
                                      target_angle=cfg.target_angle)
        views = [(scene.images[i], scene.cameras[i]) for i in selected]
        lcfg = cfg.loss_config(len(views))
        hyps = depth_hypotheses(scene.cameras[ref], cfg.num_depths)
        gt = scene.gt_depths[ref]
        temp = None if cfg.temperature <= 0 else cfg.temperature

        for cost_kind in ("naive", "first_order"):
            volumes = sweep.build_cost_volume_multi_k(
                scene.images[ref], views, scene.cameras[ref], hyps, lcfg,
                k_values=k_values, aggregation="topk", cost_kind=cost_kind,
                support_window=cfg.support_window,
            )
            for k in k_values:
                depth, _ = sweep.soft_argmin_depth(volumes[k], temperature=temp)
                dm = evaluation.depth_validation_metrics(depth, gt)
                rows.append({
                    "view": ref, "cost": cost_kind, "aggregation": "topk", "K": k,
                    "l1": dm.l1_error, "pct_within_1": dm.pct_within_1,
                    "pct_within_3": dm.pct_within_3,
                    "pct_within_3rel": dm.pct_within_3rel,
                })
            var_vol = sweep.build_cost_volume_multi_k(
                scene.images[ref], views, scene.cameras[ref], hyps, lcfg,
                k_values=[], aggregation="variance", cost_kind=cost_kind,
                support_window=cfg.support_window,
            )[0]
            depth, _ = sweep.soft_argmin_depth(var_vol, temperature=temp)
            dm = evaluation.depth_validation_metrics(depth, gt)
            rows.append({
                "view": ref, "cost": cost_kind, "aggregation": "variance", "K": 0,
                "l1": dm.l1_error, "pct_within_1": dm.pct_within_1,
                "pct_within_3": dm.pct_within_3,
                "pct_within_3rel": dm.pct_within_3rel,
            })

        # selection-frequency diagnostic at the default operating point
        default_vol = sweep.build_cost_volume_multi_k(
            scene.images[ref], views, scene.cameras[ref], hyps, lcfg,
            k_values=[lcfg.K], aggregation="topk", cost_kind="first_order",
            support_window=cfg.support_window,
        )[lcfg.K]
        depth, _ = sweep.soft_argmin_depth(default_vol, temperature=temp)
        result = loss.total_loss(scene.images[ref], scene.cameras[ref], views,
                                 depth, lcfg)
        freq += loss.topk_selection_frequency([result.selection],
                                              list(range(len(views))))
        selections.append(result.selection)
    return rows, freq


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if not cfg.scene_dir:
        raise ValueError("ablate requires --scene_dir")
    if not cfg.output_dir:
        raise ValueError("ablate requires --output_dir")
    scene = load_scene_dir(cfg.scene_dir, cfg.num_depths)
    if scene.gt_depths is None:
        raise ValueError(
            f"ablation requires ground-truth depths in {Path(cfg.scene_dir) / 'gt_depths'}"
        )
    ref_views = [int(v) for v in args.views_list.split(",")] if args.views_list else [0]
    for v in ref_views:
        if not 0 <= v < len(scene.names):
            raise ValueError(f"ablation view index {v} out of range")
    rows, freq = run_ablation(cfg, scene, ref_views)
    out = Path(cfg.output_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    header = "view\tcost\taggregation\tK\tl1\tpct_within_1\tpct_within_3\tpct_within_3rel"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['view']}\t{r['cost']}\t{r['aggregation']}\t{r['K']}\t"
            f"{r['l1']:.6g}\t{r['pct_within_1']:.6g}\t{r['pct_within_3']:.6g}\t"
            f"{r['pct_within_3rel']:.6g}"
        )
    _write_text(out / "reports" / "ablation.tsv", "\n".join(lines) + "\n")
    freq_lines = ["rank\tselections"]
    freq_lines += [f"{i + 1}\t{int(c)}" for i, c in enumerate(freq)]
    _write_text(out / "reports" / "selection_frequency.tsv", "\n".join(freq_lines) + "\n")
    plots.save_ablation_figure(rows, "pct_within_3rel",
                               out / "figures" / "ablation_pct3rel.png")
    plots.save_selection_frequency_figure(freq,
                                          out / "figures" / "selection_frequency.png")
    for line in lines:
        print(line)
    return 0


def cmd_check_gradients(args: argparse.Namespace) -> int:
    from .gradcheck import run_gradient_check

    report = run_gradient_check(
        seed=args.seed, samples=args.samples, step=args.step,
        width=args.width, height=args.height,
    )
    print(f"checked {report.checked} pixels "
          f"(skipped {report.skipped} near sampler grid lines or occlusions)")
    print(f"max relative error = {report.max_rel_error:.3e}")
    print(f"median relative error = {report.median_rel_error:.3e}")
    ok = report.max_rel_error < args.tolerance
    print("PASS" if ok else "FAIL", f"(tolerance {args.tolerance:g})")
    return 0 if ok else 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--scene_dir", help="scene directory (images/ + cams/)")
    p.add_argument("--output_dir", help="output directory")
    p.add_argument("--alpha", type=float, help="photometric weight (default 0.8)")
    p.add_argument("--beta", type=float, help="SSIM weight (default 0.2)")
    p.add_argument("--gamma", type=float, help="smoothness weight (default 0.0067)")
    p.add_argument("--views", type=int, help="M, views used in the loss (default 6)")
    p.add_argument("--topk", type=int, help="K, per-pixel selections (default 3)")
    p.add_argument("--huber_delta", type=float, help="Huber transition (default 0.2)")
    p.add_argument("--ssim_window", type=int, help="SSIM pooling window (default 3)")
    p.add_argument("--num_depths", type=int, help="D, depth hypotheses (default 128)")
    p.add_argument("--temperature", type=float,
                   help="soft-argmin temperature; 0 = data-driven")
    p.add_argument("--aggregation", choices=sweep.AGGREGATION_MODES,
                   help="cost aggregation over views (default topk)")
    p.add_argument("--cost", choices=sweep.COST_KINDS,
                   help="per-view matching cost (default first_order)")
    p.add_argument("--support_window", type=int,
                   help="square cost support window (default 3)")
    p.add_argument("--confidence_threshold", type=float,
                   help="confidence filter threshold (default 0.8)")
    p.add_argument("--depth_tolerance", type=float,
                   help="fusion relative depth tolerance (default 0.01)")
    p.add_argument("--reprojection_tolerance", type=float,
                   help="fusion reprojection tolerance in px (default 1.0)")
    p.add_argument("--min_consistent_views", type=int,
                   help="views that must agree during fusion (default 3)")
    p.add_argument("--refine_steps", type=int,
                   help="gradient-descent refinement steps (default 0)")
    p.add_argument("--refine_step_size", type=float,
                   help="initial refinement step size (default 1.0)")
    p.add_argument("--threads", type=int, help="worker threads (default 1)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--target_angle", type=float,
                   help="preferred baseline angle in degrees (default 10)")
    p.add_argument("--ply_ascii", action="store_const", const=True, default=None,
                   help="write ASCII instead of binary PLY")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustmvs",
        description="Plane-sweep multi-view stereo with robust photometric consistency",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene directory")
    p.add_argument("--kind", choices=synth.SCENE_KINDS, default="textured_plane")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--num_depths", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", help="plane-sweep depth + confidence per view")
    _add_config_flags(p)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("fuse", help="fuse depth maps into a point cloud")
    _add_config_flags(p)
    p.add_argument("--depth_dir", help="directory of *.pfm depth maps "
                                       "(default <output_dir>/depths)")
    p.add_argument("--conf_dir", help="directory of *.pfm confidence maps "
                                      "(default <output_dir>/conf)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="point-cloud distance and percentage metrics")
    _add_config_flags(p)
    p.add_argument("reconstruction", help="reconstructed PLY")
    p.add_argument("reference", help="reference PLY")
    p.add_argument("--thresholds", help="comma-separated thresholds (default 1,2,3)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="K / cost / aggregation ablation grid")
    _add_config_flags(p)
    p.add_argument("--views_list", help="comma-separated reference views (default 0)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("check-gradients",
                       help="finite-difference check of the analytic loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_check_gradients)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, CameraFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
