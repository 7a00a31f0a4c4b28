"""`arbitext` 命令列介面。

stdout 只輸出報表與偵測結果，日誌一律寫到 stderr。
exit code：0 成功、1 驗證錯誤、2 讀寫錯誤。
"""
import argparse
import json
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import NoReturn, Optional, get_args

from loguru import logger

from .augment_utils import AugmentConfig, augment_sample, draw_augmentation, resize_sample
from .config_utils import ArbitextConfig, load_config
from .decorators import EXIT_OK, EXIT_VALIDATION, exit_code_on_error
from .errors import ArbitextError, DegenerateQuad, NonConvexQuad
from .eval_utils import evaluate, format_report_text, report_to_json
from .geometry_utils import Quad, RotatedBox, normalize_quad, rbox_from_quad
from .io_utils import (
    GtFormat,
    Sample,
    load_detection_dir,
    load_gt_dir,
    load_predictions,
    load_targets,
    read_detections,
    save_targets,
    write_annotations,
    write_detections,
)
from .logger_utils import redirect_libraries_logging_to_loguru, start_log
from .nms_utils import Detection, suppress
from .pandas_utils import format_number
from .pipeline_utils import bench_nms, decode_labels, decode_predictions, pyramid_from_config, run_selfcheck
from .target_utils import build_targets_batch

TARGET_SUFFIX = ".atgt"
PREDICTION_SUFFIX = ".npz"
GT_FORMATS = list(get_args(GtFormat))


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser, *names: str) -> None:
    flags: dict[str, dict] = {
        "grid_sizes": {"type": int, "nargs": "+", "help": "網格大小，由大到小"},
        "image_size": {"type": float, "help": "正方形輸入邊長（像素）"},
        "alpha": {"type": float, "help": "正樣本分數門檻"},
        "r_a": {"type": float, "help": "anchor 尺度因子"},
        "confidence": {"type": float, "help": "text 機率門檻"},
        "merge_iou": {"type": float, "help": "LANMS 合併門檻"},
        "final_iou": {"type": float, "help": "標準 NMS 抑制門檻"},
        "eval_iou": {"type": float, "help": "評估匹配門檻"},
        "n_jobs": {"type": int, "help": "joblib 平行數"},
    }
    for name in names:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **flags[name])


def _add_mode_flag(parser: argparse.ArgumentParser, choices: Sequence[str], default: str) -> None:
    parser.add_argument("--mode", choices=choices, default=default, help="NMS 方式")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arbitext", description="Circle-anchor 文字偵測的幾何工具")
    parser.add_argument("--config", help="YAML 設定檔（預設讀取 ARBITEXT_CONFIG）")
    parser.add_argument("--log-level", dest="log_level", default=None)
    parser.add_argument("--log-dir", default=None, help="額外寫入日誌檔的資料夾")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-targets", help="標註資料夾 → 訓練目標檔")
    p.add_argument("gt_dir")
    p.add_argument("out_dir")
    p.add_argument("--format", choices=GT_FORMATS, default="icdar")
    p.add_argument("--source-size", type=int, nargs=2, metavar=("W", "H"), help="原圖大小，給定時先縮放到 image-size")
    _add_config_flags(p, "grid_sizes", "image_size", "alpha", "r_a", "n_jobs")
    p.set_defaults(handler=cmd_build_targets)

    p = sub.add_parser("decode", help="目標檔 (.atgt) 或預測檔 (.npz) → 偵測結果")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--overlay", help="另外輸出可繪製的四邊形 JSON")
    _add_mode_flag(p, ["naive", "lanms", "none"], "lanms")
    _add_config_flags(p, "image_size", "confidence", "merge_iou", "final_iou")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("nms", help="對偵測結果檔做 NMS")
    p.add_argument("detections")
    p.add_argument("--out", default="-", help="輸出檔，- 代表 stdout")
    _add_mode_flag(p, ["naive", "lanms"], "lanms")
    _add_config_flags(p, "merge_iou", "final_iou")
    p.set_defaults(handler=cmd_nms)

    p = sub.add_parser("augment", help="對標註資料夾做幾何增強")
    p.add_argument("gt_dir")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=GT_FORMATS, default="icdar")
    p.add_argument("--source-size", type=int, nargs=2, metavar=("W", "H"), default=(1280, 720))
    p.add_argument("--copies", type=int, default=1, help="每張影像產生幾份")
    p.add_argument("--canvas", action="store_true", help="啟用 canvas 擴張（TD500 設定）")
    p.add_argument("--keep-at-least-one", action="store_true")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("evaluate", help="偵測結果資料夾 + 標註資料夾 → precision / recall / F")
    p.add_argument("det_dir")
    p.add_argument("gt_dir")
    p.add_argument("--format", choices=GT_FORMATS, default="icdar")
    p.add_argument("--json", help="另外輸出 JSON 報表")
    p.add_argument("--det-scale", type=float, default=1.0, help="偵測座標乘上此比例後再與標註比較")
    _add_config_flags(p, "eval_iou", "n_jobs")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("bench-nms", help="標準 NMS 與 LANMS 的耗時比較")
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--clusters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    _add_config_flags(p, "merge_iou", "final_iou")
    p.set_defaults(handler=cmd_bench_nms)

    p = sub.add_parser("selfcheck", help="closed-loop 自我檢查")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p, "grid_sizes", "image_size", "alpha", "r_a", "n_jobs")
    p.set_defaults(handler=cmd_selfcheck)

    return parser


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #

def _annotation_box(quad: Quad) -> Optional[RotatedBox]:
    try:
        return rbox_from_quad(normalize_quad(quad))
    except (DegenerateQuad, NonConvexQuad) as e:
        logger.warning(f"略過無法擬合的標註: {e}")
        return None


def cmd_build_targets(args: argparse.Namespace, config: ArbitextConfig) -> int:
    pyramid = pyramid_from_config(config)
    annotations = load_gt_dir(args.gt_dir, args.format)
    image_ids = sorted(annotations)

    scenes = []
    for image_id in image_ids:
        width, height = args.source_size or (config.image_size, config.image_size)
        sample = Sample(image_id, width, height, tuple(annotations[image_id]))
        if args.source_size:
            sample = resize_sample(sample, config.image_size)
        boxes, flags = [], []
        for a in sample.annotations:
            box = _annotation_box(a.quad)
            if box is not None:
                boxes.append(box)
                flags.append(a.ignore)
        scenes.append((boxes, flags))

    targets = build_targets_batch(scenes, pyramid, config.image_size, config.n_jobs)
    out_dir = Path(args.out_dir)
    for image_id, grids in zip(image_ids, targets):
        save_targets(grids, out_dir / f"{image_id}{TARGET_SUFFIX}", image_id, config.image_size, config.alpha)
    logger.info(f"輸出 {len(image_ids)} 個目標檔到 {out_dir}")
    return EXIT_OK


def _decode_file(path: Path, config: ArbitextConfig, mode: Optional[str]) -> list[Detection]:
    if path.suffix == TARGET_SUFFIX:
        target = load_targets(path)
        scoped = config.model_copy(update={"image_size": target.manifest.image_size_px})
        return decode_labels(target.grids, scoped, mode)
    if path.suffix == PREDICTION_SUFFIX:
        return decode_predictions(load_predictions(path), config, mode)
    raise ArbitextError(f"無法辨識的輸入檔類型: {path}")


def cmd_decode(args: argparse.Namespace, config: ArbitextConfig) -> int:
    mode = None if args.mode == "none" else args.mode
    out_dir = Path(args.out_dir)
    overlay: dict[str, list] = {}
    for raw in args.inputs:
        path = Path(raw)
        detections = _decode_file(path, config, mode)
        write_detections(detections, out_dir / f"res_img_{path.stem}.txt")
        overlay[path.stem] = [{"points": d.quad.points.tolist(), "score": d.score} for d in detections]
        logger.info(f"{path.name}: {len(detections)} 個偵測框")

    if args.overlay:
        Path(args.overlay).write_text(json.dumps(overlay, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_nms(args: argparse.Namespace, config: ArbitextConfig) -> int:
    detections = read_detections(args.detections)
    kept, stats = suppress(detections, args.mode, config.merge_iou, config.final_iou)
    logger.info(f"NMS ({args.mode}): {stats.n_input} → {len(kept)}，IoU 測試 {stats.iou_tests} 次")
    write_detections(kept, sys.stdout if args.out == "-" else args.out)
    return EXIT_OK


def cmd_augment(args: argparse.Namespace, config: ArbitextConfig) -> int:
    cfg = AugmentConfig(seed=args.seed, canvas_enabled=args.canvas, keep_at_least_one=args.keep_at_least_one)
    annotations = load_gt_dir(args.gt_dir, args.format)
    width, height = args.source_size
    out_dir = Path(args.out_dir)

    for k, image_id in enumerate(sorted(annotations)):
        sample = Sample(image_id, width, height, tuple(annotations[image_id]))
        for copy in range(args.copies):
            draw = draw_augmentation(cfg, k * args.copies + copy)
            augmented = augment_sample(sample, cfg, draw)
            suffix = f"_{copy}" if args.copies > 1 else ""
            write_annotations(augmented.annotations, out_dir / f"gt_img_{image_id}{suffix}.txt")
            logger.debug(f"{image_id}{suffix}: {augmented.width}×{augmented.height}，{len(augmented.annotations)} 個標註")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: ArbitextConfig) -> int:
    detections = load_detection_dir(args.det_dir)
    ground_truths = load_gt_dir(args.gt_dir, args.format)
    scales = dict.fromkeys(ground_truths, args.det_scale)
    report = evaluate(detections, ground_truths, config.eval_iou, scales, config.n_jobs)

    sys.stdout.write(format_report_text(report))
    if args.json:
        Path(args.json).write_text(report_to_json(report), encoding="utf-8")
    return EXIT_OK


def cmd_bench_nms(args: argparse.Namespace, config: ArbitextConfig) -> int:
    df = bench_nms(args.n, args.clusters, args.seed, config, args.repeats)
    sys.stdout.write(format_number(df, 4).to_markdown(index=False) + "\n")
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace, config: ArbitextConfig) -> int:
    report = run_selfcheck(args.scenes, args.seed, config)
    sys.stdout.write(f"selfcheck scenes={args.scenes} seed={args.seed}\n")
    sys.stdout.write(f"precision={report.precision:.3f} recall={report.recall:.3f} F={report.fscore:.3f}\n")
    return EXIT_OK if report.fscore == 1.0 else EXIT_VALIDATION


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #

@exit_code_on_error()
def _dispatch(args: argparse.Namespace) -> int:
    overrides = {k: getattr(args, k, None) for k in ArbitextConfig.model_fields}
    config = load_config(args.config, overrides)
    if config.log_level.upper() != (args.log_level or "INFO").upper():
        start_log(config.log_level, args.log_dir)
    handler: Callable[[argparse.Namespace, ArbitextConfig], int] = args.handler
    return handler(args, config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_VALIDATION

    start_log(args.log_level or "INFO", args.log_dir)
    redirect_libraries_logging_to_loguru({"numba": "WARNING"})
    return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
