#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
实验配置、试验日志、绘图数据输出以及命令行入口

命令行:
    run   --config FILE [--seed S] [--trials J] [--out DIR]
    sweep --config FILE --seeds a..b [--workers K] [--out DIR]
    check --log FILE [--channels O]

退出码: 0 成功，1 配置错误，2 对象/运行失败，3 读写错误
"""

import argparse
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .design_laws import NormKind
from .dual_learning import DesignPair, LoggedTrial, diagnose, dilc_run
from .errors import (
    ConfigError,
    PlantError,
    PlantExecutionError,
    RunAbortedError,
    UnknownPresetError,
)
from .plants import PLANT_PRESETS, REFERENCE_PRESETS, NoiseModel, make_plant, reference_library

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DILC_OUTPUT_DIR"
LOG_FILE = "trials.csv"
CONFIG_ECHO_FILE = "config.json"
LEARNED_INPUT_FILE = "learned_input.csv"
PLOT_DATA_FILE = "plot_data.csv"
LOG_HEADER = (
    "trial",
    "e_norm",
    "e_norm_normalized",
    "pred_err_norm",
    "model_err_norm",
    "iml_contraction_norm",
    "prediction_gamma",
    "pe_rank",
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_IO = 3


class PlantSpec(BaseModel):
    """被控对象配置"""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., description="对象预设名称")
    seed: Optional[int] = Field(None, description="对象随机种子，缺省时使用实验根种子")
    spectral_radius: float = Field(0.9, ge=0.0, lt=1.0, description="随机 LTI 对象 A 的谱半径")
    state_dim: Optional[int] = Field(None, ge=1, description="状态维，缺省为 2·O")
    well_conditioned: bool = Field(False, description="是否抽取条件数良好的对象")
    sample_time: float = Field(0.02, gt=0.0, description="机械臂的控制周期(秒)")
    inner_loop: bool = Field(True, description="机械臂是否带内环 PD 稳定器，为真时输入是关节角设定值")

    @field_validator("name")
    @classmethod
    def _known_plant(cls, value):
        if value not in PLANT_PRESETS:
            raise ValueError(f"未知的被控对象 '{value}'，可选: {', '.join(PLANT_PRESETS)}")
        return value


class ReferenceSpec(BaseModel):
    """参考轨迹配置"""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., description="参考轨迹预设名称")
    amplitude: float = Field(1.0, description="幅值")

    @field_validator("name")
    @classmethod
    def _known_reference(cls, value):
        if value not in REFERENCE_PRESETS:
            raise ValueError(f"未知的参考轨迹 '{value}'，可选: {', '.join(sorted(REFERENCE_PRESETS))}")
        return value


class ExperimentConfig(BaseModel):
    """一次双重学习实验的完整配置"""

    model_config = ConfigDict(extra="forbid")

    plant: PlantSpec
    reference: ReferenceSpec
    trials: int = Field(..., ge=1, description="试验次数 J")
    channels: int = Field(2, ge=1, description="输入/输出通道数 O")
    samples: int = Field(20, ge=1, description="每次试验的采样数 N")
    design: str = Field("nono", description="设计组合，IML 在前、ILC 在后")
    norm_floor: float = Field(1e-8, gt=0.0, description="自参数化范数下限")
    norm_kind: NormKind = Field(NormKind.SPECTRAL, description="子块堆叠所用范数")
    input_std: float = Field(0.01, ge=0.0, description="u_0 的标准差")
    noise_std: float = Field(1e-5, ge=0.0, description="测量噪声标准差")
    dither_std: float = Field(0.0, ge=0.0, description="激励不足时的抖动标准差")
    seed: int = Field(0, description="根随机种子")
    output_dir: str = Field("runs", description="输出目录")

    @field_validator("design")
    @classmethod
    def _known_design(cls, value):
        return DesignPair.from_string(value).to_string()

    @property
    def designs(self):
        return DesignPair.from_string(self.design)


@dataclass(frozen=True)
class RunSummary:
    final_normalized_error: Optional[float]
    threshold_trial: Optional[int]
    violation_count: int
    trials_completed: int
    failed: bool = False
    failure: Optional[str] = None


@dataclass(frozen=True)
class RunArtifacts:
    log_path: Path
    config_path: Path
    learned_input_path: Optional[Path]
    summary: RunSummary


def _unflatten(data):
    """把 "plant.name" 形式的键展开为嵌套字典"""
    nested = {}
    for key, value in data.items():
        parts = key.split(".")
        target = nested
        for part in parts[:-1]:
            child = target.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(part, "既给出了值又给出了子键")
            target = child
        leaf = parts[-1]
        if isinstance(value, dict) and isinstance(target.get(leaf), dict):
            target[leaf].update(value)
        elif leaf in target and isinstance(target[leaf], dict):
            raise ConfigError(key, "既给出了值又给出了子键")
        else:
            target[leaf] = value
    return nested


def _flatten(data, prefix=""):
    flat = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def validate_config(data):
    """校验字典形式的配置，错误转换为带字段路径的 ConfigError"""
    if not isinstance(data, dict):
        raise ConfigError("", "配置必须是一个 JSON 对象")
    try:
        return ExperimentConfig.model_validate(_unflatten(data))
    except ValidationError as exc:
        errors = exc.errors()
        first = errors[0]
        path = ".".join(str(part) for part in first["loc"])
        message = "; ".join(
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in errors)
        raise ConfigError(path, message) from exc


def parse_config(path):
    """
    读取 JSON 配置文件并填充默认值

    异常:
        OSError: 文件无法读取
        ConfigError: 解析或校验失败
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"JSON 解析失败: {exc}") from exc
    return validate_config(data)


def apply_overrides(cfg, seed=None, trials=None, output_dir=None, environ=None):
    """命令行参数优先于环境变量 DILC_OUTPUT_DIR，环境变量优先于文件中的值"""
    environ = os.environ if environ is None else environ
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if trials is not None:
        updates["trials"] = trials
    if output_dir is not None:
        updates["output_dir"] = str(output_dir)
    elif environ.get(OUTPUT_DIR_ENV):
        updates["output_dir"] = environ[OUTPUT_DIR_ENV]
    if not updates:
        return cfg
    return validate_config({**_flatten(cfg.model_dump(mode="json")), **updates})


def _fmt(value):
    return "" if value is None else format(float(value), ".17g")


def _log_row(record):
    return [
        str(record.trial),
        _fmt(record.tracking_error_norm),
        _fmt(record.normalized_error_norm),
        _fmt(record.prediction_error_norm),
        _fmt(record.model_error_norm),
        _fmt(record.iml_contraction_norm),
        _fmt(record.prediction_gamma),
        str(record.pe_rank),
    ]


def write_config_echo(cfg, path):
    flat = _flatten(cfg.model_dump(mode="json"))
    Path(path).write_text(json.dumps(flat, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_learned_input(u, path):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["sample"] + [f"u{k + 1}" for k in range(u.channels)])
        for n, row in enumerate(u.as_samples(), start=1):
            writer.writerow([str(n)] + [_fmt(value) for value in row])


def build_experiment(cfg):
    """根据配置构造对象、参考轨迹与噪声模型"""
    plant_seed = cfg.plant.seed if cfg.plant.seed is not None else cfg.seed
    plant = make_plant(
        cfg.plant.name,
        cfg.channels,
        plant_seed,
        spectral_radius=cfg.plant.spectral_radius,
        state_dim=cfg.plant.state_dim,
        well_conditioned=cfg.plant.well_conditioned,
        sample_time=cfg.plant.sample_time,
        inner_loop=cfg.plant.inner_loop,
    )
    reference = reference_library(cfg.reference.name, cfg.channels, cfg.samples, cfg.reference.amplitude)
    noise = NoiseModel(cfg.noise_std, cfg.seed) if cfg.noise_std > 0 else None
    return plant, reference, noise


def run_experiment(cfg):
    """
    执行一次双重学习实验，逐行写出试验日志

    返回:
        RunArtifacts；运行中途失败时 summary.failed 为真，已完成的试验保留在日志中
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOG_FILE
    config_path = out / CONFIG_ECHO_FILE
    learned_path = out / LEARNED_INPUT_FILE
    write_config_echo(cfg, config_path)

    plant, reference, noise = build_experiment(cfg)
    records = []
    failure = None
    with open(log_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LOG_HEADER)

        def on_trial(record):
            writer.writerow(_log_row(record))
            handle.flush()

        try:
            records = dilc_run(
                plant,
                reference,
                cfg.trials,
                cfg.designs,
                seed=cfg.seed,
                input_std=cfg.input_std,
                noise=noise,
                norm_floor=cfg.norm_floor,
                norm_kind=cfg.norm_kind,
                dither_std=cfg.dither_std,
                on_trial=on_trial,
            )
        except RunAbortedError as exc:
            records = exc.records
            failure = str(exc)
            logger.error("实验在第 %d 次试验中止，已写出 %d 行日志", exc.trial, len(records))

    if records and failure is None:
        _write_learned_input(records[-1].u_next, learned_path)
    elif learned_path.exists():
        learned_path.unlink()

    report = diagnose(records, cfg.channels)
    summary = RunSummary(
        final_normalized_error=records[-1].normalized_error_norm if records else None,
        threshold_trial=report.threshold_trial,
        violation_count=report.violation_count,
        trials_completed=len(records),
        failed=failure is not None,
        failure=failure,
    )
    logger.info("结果写入 %s", out)
    return RunArtifacts(log_path, config_path, learned_path if failure is None and records else None, summary)


def _optional_float(text):
    return float(text) if text != "" else None


def read_trial_log(path):
    """把试验日志读回为 LoggedTrial 列表"""
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != LOG_HEADER:
            raise ConfigError("log", f"日志表头不符: {reader.fieldnames}")
        rows = []
        for line, row in enumerate(reader, start=2):
            try:
                rows.append(LoggedTrial(
                    trial=int(row["trial"]),
                    tracking_error_norm=float(row["e_norm"]),
                    normalized_error_norm=float(row["e_norm_normalized"]),
                    prediction_error_norm=float(row["pred_err_norm"]),
                    model_error_norm=_optional_float(row["model_err_norm"]),
                    iml_contraction_norm=float(row["iml_contraction_norm"]),
                    prediction_gamma=float(row["prediction_gamma"]),
                    pe_rank=int(row["pe_rank"]),
                ))
            except (TypeError, ValueError) as exc:
                raise ConfigError("log", f"第 {line} 行无法解析: {exc}") from exc
        return rows


def emit_plot_data(artifacts):
    """
    写出两列 (trial, 归一化误差) 的绘图数据，无表头

    返回:
        绘图数据文件路径
    """
    log_path = Path(artifacts.log_path if hasattr(artifacts, "log_path") else artifacts)
    if not log_path.exists():
        raise FileNotFoundError(f"试验日志不存在: {log_path}")
    rows = read_trial_log(log_path)
    plot_path = log_path.with_name(PLOT_DATA_FILE)
    with open(plot_path, "w", encoding="utf-8", newline="") as handle:
        for row in rows:
            handle.write(f"{row.trial},{float(row.normalized_error_norm)!r}\n")
    return plot_path


def parse_seed_range(text):
    """解析 "a..b"(含两端)为种子列表"""
    start, sep, stop = text.partition("..")
    try:
        if not sep:
            return [int(text)]
        first, last = int(start), int(stop)
    except ValueError:
        raise ConfigError("seeds", f"无法解析种子范围 '{text}'，格式为 a..b") from None
    if last < first:
        raise ConfigError("seeds", f"种子范围 '{text}' 为空")
    return list(range(first, last + 1))


def _print_summary(artifacts):
    summary = artifacts.summary
    print(f"日志: {artifacts.log_path}")
    print(f"完成试验: {summary.trials_completed}")
    if summary.final_normalized_error is not None:
        print(f"最终归一化误差: {summary.final_normalized_error:.6g}")
    print(f"阈值试验: {summary.threshold_trial}")
    print(f"条件违反次数: {summary.violation_count}")
    if summary.failed:
        print(f"失败: {summary.failure}")


def _command_run(args):
    cfg = apply_overrides(parse_config(args.config), args.seed, args.trials, args.out)
    artifacts = run_experiment(cfg)
    emit_plot_data(artifacts)
    _print_summary(artifacts)
    return EXIT_RUN if artifacts.summary.failed else EXIT_OK


def sweep_configs(cfg, seeds):
    base = Path(cfg.output_dir)
    return [apply_overrides(cfg, seed=seed, output_dir=base / f"seed_{seed}") for seed in seeds]


def _command_sweep(args):
    cfg = apply_overrides(parse_config(args.config), output_dir=args.out)
    configs = sweep_configs(cfg, parse_seed_range(args.seeds))
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(run_experiment, configs))
    failed = 0
    for member, artifacts in zip(configs, results):
        summary = artifacts.summary
        print(f"seed={member.seed} 最终归一化误差={summary.final_normalized_error} "
              f"阈值试验={summary.threshold_trial} 违反={summary.violation_count}"
              + (" 失败" if summary.failed else ""))
        logger.debug("绘图数据: %s", emit_plot_data(artifacts))
        failed += summary.failed
    return EXIT_RUN if failed else EXIT_OK


def _channels_from_echo(log_path):
    echo = Path(log_path).with_name(CONFIG_ECHO_FILE)
    if not echo.exists():
        raise ConfigError("channels", f"未给出 --channels 且找不到 {echo}")
    return int(json.loads(echo.read_text(encoding="utf-8"))["channels"])


def _command_check(args):
    rows = read_trial_log(args.log)
    channels = args.channels if args.channels is not None else _channels_from_echo(args.log)
    report = diagnose(rows, channels)
    print(f"试验数: {report.trials}")
    print(f"模型收敛条件不满足的试验: {[row.trial for row, ok in zip(rows, report.contraction_flags) if not ok]}")
    print(f"预测收缩 γ<1 的试验数: {sum(report.prediction_flags)}")
    print(f"激励不足的窗口(结束试验): {list(report.failed_windows)}")
    print(f"阈值试验: {report.threshold_trial}")
    if report.model_error_monotone is not None:
        print(f"模型误差单调: {report.model_error_monotone}")
    print(f"条件违反次数: {report.violation_count}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dual_ilc", description="MIMO 双重迭代学习控制实验")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="执行一次实验")
    run.add_argument("--config", required=True, help="JSON 配置文件")
    run.add_argument("--seed", type=int, help="覆盖根种子")
    run.add_argument("--trials", type=int, help="覆盖试验次数")
    run.add_argument("--out", help="覆盖输出目录")
    run.set_defaults(handler=_command_run)

    sweep = commands.add_parser("sweep", help="按种子范围批量执行")
    sweep.add_argument("--config", required=True, help="JSON 配置文件")
    sweep.add_argument("--seeds", required=True, help="种子范围 a..b(含两端)")
    sweep.add_argument("--workers", type=int, help="并行进程数")
    sweep.add_argument("--out", help="覆盖输出根目录")
    sweep.set_defaults(handler=_command_sweep)

    check = commands.add_parser("check", help="从日志重新评估收敛条件")
    check.add_argument("--log", required=True, help="trials.csv 路径")
    check.add_argument("--channels", type=int, help="通道数 O，缺省读取同目录的 config.json")
    check.set_defaults(handler=_command_check)
    return parser


def main(argv=None):
    """命令行入口，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger("dual_ilc").setLevel(logging.DEBUG)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error("配置错误: %s", exc)
        return EXIT_CONFIG
    except (RunAbortedError, PlantError, PlantExecutionError, UnknownPresetError) as exc:
        logger.error("运行失败: %s", exc)
        return EXIT_RUN
    except OSError as exc:
        logger.error("读写错误: %s", exc)
        return EXIT_IO
