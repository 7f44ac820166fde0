"""命令行入口: python -m scankit <子命令>

子命令: convert | evaluate | baseline | train | generate | analyze | thumbnail
失败时在 stderr 输出一行 JSON: {"error": "<错误类名>", "message": "..."}
"""

from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import argparse
import json
import sys

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn

from scankit.config import Setting, read_config
from scankit.exceptions import CliError, ScankitError
from scankit.log import console, logger
from scankit.utils.file import FileHelper

PROG = "scankit"


class ArgumentParser(argparse.ArgumentParser):
    """参数错误抛出 CliError, 由 main 统一输出单行错误"""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _progress(enabled: bool) -> Progress:
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
        disable=not enabled,
    )


def _sets_or_fail(sets: dict, path) -> dict:
    if not sets:
        raise CliError(f"{path} 中没有可用的扫视路径")
    return sets


# 子命令


def cmd_convert(args, setting: Setting) -> None:
    from scankit.ingest import ingest, write_scanpaths

    sets = _sets_or_fail(ingest(args.input, setting.ingest), args.input)
    write_scanpaths(args.out, sets)


def cmd_evaluate(args, setting: Setting) -> None:
    from scankit.base import get_parameters_details, metrics
    from scankit.ingest import load_scanpaths
    from scankit.metrics import evaluate

    if args.list:
        for name, spec in metrics.items():
            console.print(f"[bold]{name}[/bold] ({'越低越好' if spec.lower_is_better else '越高越好'})", highlight=False)
            console.print(get_parameters_details(spec.func), highlight=False)
        return
    if not (args.gen and args.gt and args.out):
        raise CliError("evaluate 需要 --gen, --gt 与 --out")
    gen = _sets_or_fail(load_scanpaths(args.gen), args.gen)
    gt = _sets_or_fail(load_scanpaths(args.gt), args.gt)
    missing = [image_id for image_id in gt if image_id not in gen]
    if args.gen_image_id:
        gen = {image_id: next(iter(gen.values())) for image_id in gt}
    elif missing:
        raise CliError(f"生成文件中缺少图像 {', '.join(missing)}")
    names = args.metrics.split(",") if args.metrics else None
    reports = [evaluate(gen[image_id], gt[image_id], setting.metrics, names) for image_id in gt]
    _write_reports(args.out, reports, args.format)


def _write_reports(path, reports, fmt: str) -> None:
    if fmt == "text":
        FileHelper.atomic_write(Path(path), "\n".join(report.to_text() for report in reports))
    else:
        FileHelper.write_lines(Path(path), [report.to_json() for report in reports])
    for report in reports:
        logger.info(f"{report.image_id} [{report.protocol}] " + " ".join(f"{k}={v:.4f}" for k, v in report.values().items()))


def cmd_baseline(args, setting: Setting) -> None:
    from scankit.ingest import load_scanpaths
    from scankit.metrics import human_baseline_report, random_baseline_report

    gt = _sets_or_fail(load_scanpaths(args.gt), args.gt)
    names = args.metrics.split(",") if args.metrics else None
    if args.kind == "human":
        reports = [human_baseline_report(sps, setting.metrics, names) for sps in gt.values()]
    else:
        reports = [random_baseline_report(sps, setting.metrics, args.n, setting.seed, names) for sps in gt.values()]
    _write_reports(args.out, reports, args.format)


def _load_training_data(args, setting: Setting):
    from scankit.gan.synthetic import make_blob_dataset
    from scankit.ingest import ingest
    from scankit.utils.image import load_panorama

    cfg = setting.train
    if args.synthetic:
        data = make_blob_dataset(args.synthetic, height=cfg.image_height, seed=cfg.seed)
        val = make_blob_dataset(max(1, args.synthetic // 4), height=cfg.image_height, seed=cfg.seed + 1)
        return data, val
    if not (args.data and args.images):
        raise CliError("train 需要 --data 与 --images, 或者 --synthetic N")
    sets = _sets_or_fail(ingest(args.data, setting.ingest), args.data)
    dataset = []
    for image_id, sps in sets.items():
        candidates = [Path(args.images) / f"{image_id}{suffix}" for suffix in (".png", ".jpg", ".jpeg")]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            raise CliError(f"找不到图像 {image_id} (在 {args.images} 下)")
        dataset.append((load_panorama(path, cfg.image_height), sps))
    return dataset, None


def _finite_or_none(value):
    """JSON 不允许 NaN / Infinity, 非有限的浮点数写成 null"""
    if isinstance(value, float):
        return value if np.isfinite(value) else None
    if isinstance(value, dict):
        return {key: _finite_or_none(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_finite_or_none(item) for item in value]
    return value


def cmd_train(args, setting: Setting) -> None:
    from scankit.gan.trainer import train

    cfg = setting.train
    dataset, val = _load_training_data(args, setting)
    with _progress(not args.quiet) as progress:
        task = progress.add_task("训练", total=cfg.epochs)
        result = train(dataset, cfg, val, args.resume, on_epoch=lambda log: progress.update(task, completed=log.epoch))
    summary = {
        "best_epoch": result.best_epoch,
        "best_val_dtw": result.best_val,
        "initial_val_dtw": result.initial_val,
        "epochs": [asdict(log) for log in result.logs],
    }
    print(json.dumps(_finite_or_none(summary), ensure_ascii=False, allow_nan=False))


def cmd_generate(args, setting: Setting) -> None:
    from scankit.gan.generate import generate, load_model
    from scankit.ingest import write_scanpaths
    from scankit.utils.image import load_panorama

    model = load_model(args.model)
    img = load_panorama(args.image, model.cfg.image_height)
    sps = generate(img, args.n, model, setting.seed, workers=args.workers)
    sps.image_id = args.image_id or img.name
    write_scanpaths(args.out, [sps])


def cmd_analyze(args, setting: Setting) -> None:
    from scankit import behavior
    from scankit.ingest import load_scanpaths
    from scankit.utils.image import save_heatmap

    cfg = setting.behavior
    sets = _sets_or_fail(load_scanpaths(args.input), args.input)
    if args.image_id:
        if args.image_id not in sets:
            raise CliError(f"{args.input} 中没有图像 {args.image_id}")
        sets = {args.image_id: sets[args.image_id]}
    out_dir = Path(args.out_dir)
    kinds = set(args.kind.split(","))
    with _progress(not args.quiet) as progress:
        task = progress.add_task("分析", total=len(sets))
        for image_id, sps in sets.items():
            folder = out_dir / image_id
            FileHelper.folder_create(folder)
            if "aggregate" in kinds:
                agg = behavior.aggregate_map(sps, cfg.map_height, cfg.map_width, cfg.blur_sigma)
                np.save(folder / "aggregate.npy", agg.values)
                save_heatmap(folder / "aggregate.png", agg.values)
                lat, marginal = behavior.latitude_marginal(agg)
                _write_json(folder / "latitude_marginal.json", [{"lat_deg": float(a), "mass": float(m)} for a, m in zip(lat, marginal)])
            if "kde" in kinds:
                length = max(len(sp) for sp in sps)
                for k in range(length):
                    density = behavior.kde_timestamp(sps, k / sps[0].sample_rate_hz, cfg.kappa, cfg.map_height, cfg.map_width)
                    np.save(folder / f"kde_{k:03d}.npy", density.values)
                    save_heatmap(folder / f"kde_{k:03d}.png", density.values)
            if "regions" in kinds:
                groups = behavior.start_region_partition(sps, cfg.start_bin_deg)
                rows = []
                for key, group in groups.items():
                    low, high = behavior.region_bounds(key, cfg.start_bin_deg)
                    for k in range(max(len(sp) for sp in group)):
                        mode, spread = behavior.kde_mode_and_spread(
                            behavior.kde_timestamp(group, k / group[0].sample_rate_hz, cfg.kappa, cfg.map_height, cfg.map_width)
                        )
                        rows.append({"region": [low, high], "n": len(group), "t": k, "mode_lat": mode.lat, "mode_lon": mode.lon, "spread": spread})
                _write_json(folder / "regions.json", rows)
            if "exploration" in kinds:
                _write_json(folder / "exploration.json", behavior.exploration_time(sps, cfg.offsets_deg).rows())
            if "roc" in kinds:
                if len(sps) < 2:
                    logger.warning(f"{image_id} 只有一条扫视路径, 跳过 ROC")
                else:
                    roc = behavior.roc_congruency(sps, cfg.map_height, cfg.map_width, cfg.roc_ladder, cfg.blur_sigma)
                    _write_json(folder / "roc.json", roc.rows())
            progress.advance(task)
    logger.info(f"分析结果已写入 {out_dir}")


def _write_json(path: Path, data) -> None:
    FileHelper.atomic_write(path, json.dumps(data, ensure_ascii=False, indent=2))


def cmd_thumbnail(args, setting: Setting) -> None:
    from scankit.gan.generate import load_model
    from scankit.ingest import load_scanpaths
    from scankit.thumbnail import export_frames, thumbnail_trajectory, trajectory_from_scanpaths, trajectory_rows, upsample_trajectory
    from scankit.utils.image import load_panorama

    cfg = setting.thumbnail
    if args.scanpaths:
        sets = _sets_or_fail(load_scanpaths(args.scanpaths), args.scanpaths)
        img = load_panorama(args.image)
        frames = trajectory_from_scanpaths(sets.get(img.name) or next(iter(sets.values())), cfg)
    elif args.model:
        model = load_model(args.model)
        img = load_panorama(args.image, model.cfg.image_height)
        frames = thumbnail_trajectory(img, model, cfg, setting.seed)
        img = load_panorama(args.image)
    else:
        raise CliError("thumbnail 需要 --model 或 --scanpaths")
    frames = upsample_trajectory(frames, cfg.upsample)
    out_dir = Path(args.out_dir)
    _write_json(out_dir / "trajectory.json", trajectory_rows(frames))
    export_frames(img, frames, out_dir, cfg.out_height, cfg.out_width)


# 参数


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML 配置文件 (默认读取当前目录下的 scankit.yaml)")
    parser.add_argument("--log-level", dest="log_level", help="日志等级, 例如 DEBUG")
    parser.add_argument("--quiet", action="store_true", help="不显示进度条")


def _add_metric_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--metrics", help="只计算这些指标, 逗号分隔, 例如 LEV,DTW")
    parser.add_argument("--format", choices=("json", "text"), default="json", help="报告格式")
    parser.add_argument("--n-lat", dest="metrics.n_lat", type=int, help="量化网格行数")
    parser.add_argument("--n-lon", dest="metrics.n_lon", type=int, help="量化网格列数")
    parser.add_argument("--radius", dest="metrics.recurrence_radius", type=float, help="交叉递归半径 (弧度)")
    parser.add_argument("--min-line", dest="metrics.min_line", type=int, help="DET/LAM 的最短线长")
    parser.add_argument("--tde-k", dest="metrics.tde_k", type=int, help="TDE 子路径长度")
    parser.add_argument("--tde-stride", dest="metrics.tde_stride", type=int, help="TDE 子路径步长")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=PROG, description="360° 全景图扫视路径工具箱")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("convert", help="原始眼动记录重采样为 1 Hz 的规范文件")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hz", dest="ingest.target_hz", type=float, help="目标采样率")
    p.add_argument("--T", dest="ingest.target_T", type=int, help="目标长度")
    p.add_argument("--short-policy", dest="ingest.short_policy", choices=("reject", "keep"))
    p.add_argument("--degrees", dest="ingest.degrees", action="store_const", const=True, help="输入角度为角度制")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="生成路径与真值路径的指标报告")
    _add_common(p)
    _add_metric_flags(p)
    p.add_argument("--gen")
    p.add_argument("--gt")
    p.add_argument("--out")
    p.add_argument("--gen-image-id", action="store_true", help="生成文件只有一张图时, 与真值中的每张图比较")
    p.add_argument("--list", action="store_true", help="列出全部指标及其参数")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="人类基线或随机基线")
    _add_common(p)
    _add_metric_flags(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("human", "random"), default="human")
    p.add_argument("--n", type=int, help="随机路径条数, 默认与真值相同")
    p.add_argument("--seed", dest="seed", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="训练条件 GAN")
    _add_common(p)
    p.add_argument("--data", help="扫视路径文件")
    p.add_argument("--images", help="全景图目录, 文件名为 <image_id>.png")
    p.add_argument("--synthetic", type=int, help="使用 N 张合成亮斑图训练")
    p.add_argument("--out", dest="train.checkpoint_path", help="最好 epoch 的参数文件, 续训状态写在 <out>.resume")
    p.add_argument("--resume", help="续训文件")
    p.add_argument("--log-path", dest="train.log_path", help="逐轮 JSON 日志")
    p.add_argument("--epochs", dest="train.epochs", type=int)
    p.add_argument("--max-steps", dest="train.max_steps", type=int)
    p.add_argument("--seed", dest="train.seed", type=int)
    p.add_argument("--lr-g", dest="train.lr_g", type=float)
    p.add_argument("--lr-d", dest="train.lr_d", type=float)
    p.add_argument("--batch-size", dest="train.batch_size", type=int)
    p.add_argument("--lambda-dtw", dest="train.lambda_dtw", type=float)
    p.add_argument("--gamma", dest="train.gamma", type=float)
    p.add_argument("--data-term", dest="train.data_term", choices=("sph_dtw", "euclid_dtw", "mse"))
    p.add_argument("--non-saturating", dest="train.non_saturating", action="store_const", const=True)
    p.add_argument("--image-height", dest="train.image_height", type=int)
    p.add_argument("--no-coordconv", dest="train.coordconv", action="store_const", const=False, help="不追加坐标通道")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="为一张全景图生成扫视路径")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--image-id", help="输出中的 image_id, 默认为图像文件名")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="聚合图, 核密度, 探索时间与 ROC")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--image-id")
    p.add_argument("--kind", default="aggregate,kde,regions,exploration,roc", help="逗号分隔的分析种类")
    p.add_argument("--kappa", dest="behavior.kappa", type=float)
    p.add_argument("--blur-sigma", dest="behavior.blur_sigma", type=float)
    p.add_argument("--bin-deg", dest="behavior.start_bin_deg", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("thumbnail", help="缩略视频的轨迹与逐帧 PNG")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model")
    p.add_argument("--scanpaths", help="直接使用已有的扫视路径而不是生成")
    p.add_argument("--n", dest="thumbnail.n", type=int)
    p.add_argument("--kappa", dest="thumbnail.kappa", type=float)
    p.add_argument("--upsample", dest="thumbnail.upsample", type=int)
    p.add_argument("--out-height", dest="thumbnail.out_height", type=int)
    p.add_argument("--out-width", dest="thumbnail.out_width", type=int)
    p.add_argument("--seed", dest="seed", type=int)
    p.set_defaults(func=cmd_thumbnail)
    return parser


def flag_overrides(args: argparse.Namespace) -> dict:
    """把 "section.key" 形式的参数整理成嵌套字典, 未给出的 (None) 不覆盖"""
    overrides: dict = {}
    for key, value in vars(args).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            overrides.setdefault(section, {})[name] = value
        elif key in ("seed", "log_level"):
            overrides[key] = value
    return overrides


def _fail(error: Exception, code: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": str(error)}, ensure_ascii=False) + "\n")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setting = read_config(args.config, flag_overrides(args))
        logger.info(f"{args.command} 使用配置: {json.dumps(setting.model_dump(mode='json'), ensure_ascii=False)}")
        func: Callable = args.func
        func(args, setting)
    except CliError as e:
        return _fail(e, e.code, 2)
    except ScankitError as e:
        return _fail(e, e.code, 1)
    except KeyboardInterrupt as e:
        return _fail(e, "Interrupted", 130)
    except OSError as e:
        return _fail(e, "IOError", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
