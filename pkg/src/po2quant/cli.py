"""Command-line interface.

Subcommands: fit-scale, quantize, grad-fit, toy-rtlm, toy-converge, qat,
simulate-int. Exit codes: 0 success, 1 validation/usage error, 2 runtime
error (degenerate fit, exponent range blowup, or a diverged training run).

Tensors are read and written in the PQT1 container (see tensor_io). The
experiment subcommands read an optional JSON config whose keys match their
config dataclass fields; explicit flags override file values, and the fully
resolved config is echoed into the output directory as config.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Po2Scale, QuantConfig, msqe, po2_project, quantize, round_half_away
from .errors import (
    DegenerateCodesError,
    Po2QuantError,
    ScaleRangeError,
    ValidationError,
)
from .gradscale import (
    backward,
    effective_scale,
    freeze,
    freeze_step,
    init_grad_scale,
)
from .harness.metrics import MetricSeries, metric_scale_transitions
from .harness.qat import (
    QatDataConfig,
    QatModelConfig,
    QatQuantizerConfig,
    toy_qat_train,
)
from .harness.toy import (
    ToyQuantizerExperimentConfig,
    toy_convergence_experiment,
    toy_rtlm_experiment,
)
from .msqe_fit import (
    GvaState,
    fit_scale_msqe,
    gva_msqe_weights,
    line_search,
    outlier_mask,
    weighted_fit_scale,
)
from .optim import adam_init, adam_step
from .fpsim import QuantizedLayer, float_reference_forward, int_forward
from .tensor_io import read_tensor, write_tensor


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract wants 1.
    def error(self, message):
        raise _UsageError(self, message)


def _clip_fraction(w: np.ndarray, scale: Po2Scale, cfg: QuantConfig) -> float:
    r = round_half_away(w / scale.value)
    return float(np.mean((r < cfg.q_min) | (r > cfg.q_max)))


def _write_series_csv(out_dir: Path, series: MetricSeries) -> Path:
    path = out_dir / (series.name.replace("/", "_") + ".csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "value"])
        for step, value in zip(series.steps, series.values):
            writer.writerow([step, value])
    return path


def _echo_config(out_dir: Path, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _merge_config(defaults: dict, config_path: Optional[str], overrides: dict) -> dict:
    merged = dict(defaults)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError(f"config {config_path} must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _quant_cfg(args) -> QuantConfig:
    return QuantConfig(bit_width=args.bits, signed=not args.unsigned)


# ---------------------------------------------------------------- fit-scale


def _cmd_fit_scale(args) -> int:
    w = read_tensor(args.input).astype(np.float64)
    cfg = _quant_cfg(args)
    weights = None
    mask = None
    if args.sigma_outlier is not None:
        mask = outlier_mask(w, args.sigma_outlier)
        weights = mask
    if args.gva_state is not None:
        v = read_tensor(args.gva_state).astype(np.float64)
        state = GvaState(v=v.reshape(w.shape), step_count=1)
        weights = gva_msqe_weights(state, mask)
    if args.delta_init is not None:
        delta_init = args.delta_init
    else:
        active = np.abs(w) if weights is None else np.abs(w)[weights > 0]
        peak = float(np.max(active)) if active.size else 0.0
        if peak == 0.0:
            peak = float(np.max(np.abs(w)))
        delta_init = peak / cfg.q_max if peak > 0 else 1.0
    init_scale = po2_project(delta_init)
    msqe_before = msqe(w, quantize(w, init_scale, cfg), weights)
    if weights is None:
        scale = fit_scale_msqe(w, delta_init, args.n_iters, cfg)
    else:
        scale = weighted_fit_scale(w, delta_init, args.n_iters, weights, cfg)
    if args.line_search > 0:
        scale = line_search(w, scale, args.line_search, cfg, weights=weights)
    result = {
        "exponent": scale.exponent,
        "scale": scale.value,
        "msqe_before": msqe_before,
        "msqe_after": msqe(w, quantize(w, scale, cfg), weights),
        "clip_fraction": _clip_fraction(w, scale, cfg),
    }
    if args.out is not None:
        out_dir = Path(args.out)
        _echo_config(out_dir, _args_config(args))
        with open(out_dir / "fit_scale.json", "w") as fh:
            json.dump(result, fh, indent=2)
            fh.write("\n")
    print(json.dumps(result))
    return 0


# ----------------------------------------------------------------- quantize


def _cmd_quantize(args) -> int:
    w = read_tensor(args.input).astype(np.float64)
    cfg = _quant_cfg(args)
    if args.exponent is not None:
        scale = Po2Scale(args.exponent)
    else:
        peak = float(np.max(np.abs(w)))
        delta_init = peak / cfg.q_max if peak > 0 else 1.0
        scale = fit_scale_msqe(w, delta_init, args.n_iters, cfg)
        scale = line_search(w, scale, args.line_search, cfg)
    if args.codes:
        out = np.clip(round_half_away(w / scale.value), cfg.q_min, cfg.q_max).astype(np.int64)
    else:
        out = quantize(w, scale, cfg)
    write_tensor(args.output, out)
    print(json.dumps({"exponent": scale.exponent, "output": str(args.output)}))
    return 0


# ----------------------------------------------------------------- grad-fit


def _cmd_grad_fit(args) -> int:
    w = read_tensor(args.input).astype(np.float64)
    cfg = _quant_cfg(args)
    out_dir = Path(args.out)
    _echo_config(out_dir, _args_config(args))
    freeze_at = None if args.freeze_at in (None, "none") else int(args.freeze_at)
    state = init_grad_scale(w, cfg, rounding_mode=args.mode)
    adam = adam_init()
    rows = []
    for step in range(args.steps):
        if freeze_at is not None and step >= freeze_at and not state.frozen:
            state = freeze(state)
        observed = effective_scale(state, w, None, cfg)
        state, used = freeze_step(state, observed)
        w_q = quantize(w, used, cfg)
        rows.append(
            (step, state.delta_log2, used.exponent, msqe(w, w_q), _clip_fraction(w, used, cfg))
        )
        if not state.frozen:
            _, grad = backward(w, state, 2.0 * (w_q - w), cfg, scale=used)
            new_dlog2, adam = adam_step(state.delta_log2, grad, adam, args.lr)
            state = replace(state, delta_log2=new_dlog2)
    csv_path = out_dir / "grad_fit.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "delta_log2", "exponent", "msqe", "clip_fraction"])
        writer.writerows(rows)
    print(json.dumps({"final_exponent": rows[-1][2], "csv": str(csv_path)}))
    return 0


# ------------------------------------------------------------- toy commands


_TOY_DEFAULTS = {
    "n_elements": 256,
    "noise_sigma": 0.01,
    "init_delta_log2": -0.02,
    "steps": 300,
    "lr": 0.01,
    "mode": "ceil",
    "seed": 0,
    "freeze_at": None,
}

_CONVERGE_DEFAULTS = {
    "n_elements": 256,
    "noise_sigma": 0.0,
    "init_delta_log2": -0.02,
    "steps": 2000,
    "lr": 0.01,
    "mode": "ceil",
    "seed": 0,
    "freeze_at": 1600,
}


def _run_toy(args, defaults: dict, runner) -> int:
    overrides = {
        "seed": args.seed,
        "steps": args.steps,
        "noise_sigma": args.noise_sigma,
        "mode": args.mode,
        "freeze_at": args.freeze_at,
    }
    merged = _merge_config(defaults, args.config, overrides)
    out_dir = Path(args.out)
    _echo_config(out_dir, merged)
    series = runner(ToyQuantizerExperimentConfig(**merged))
    _write_series_csv(out_dir, series)
    summary = {
        "transition_count": metric_scale_transitions(series),
        "final_exponent": series.values[-1],
        "steps": len(series),
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def _cmd_toy_rtlm(args) -> int:
    return _run_toy(args, _TOY_DEFAULTS, toy_rtlm_experiment)


def _cmd_toy_converge(args) -> int:
    return _run_toy(args, _CONVERGE_DEFAULTS, toy_convergence_experiment)


# ---------------------------------------------------------------------- qat


_QAT_DEFAULTS = {
    "model": {},
    "quantizer": {},
    "data": {},
}


def _cmd_qat(args) -> int:
    merged = _merge_config(_QAT_DEFAULTS, args.config, {})
    for section in merged:
        if not isinstance(merged[section], dict):
            raise ValidationError(f"config section {section!r} must be an object")
    if args.seed is not None:
        merged["model"] = {**merged["model"], "seed": args.seed}
    if args.steps is not None:
        merged["model"] = {**merged["model"], "steps": args.steps}
    if args.family is not None:
        merged["quantizer"] = {**merged["quantizer"], "family": args.family}
    try:
        model_cfg = QatModelConfig(**merged["model"])
        quant_cfg = QatQuantizerConfig(**merged["quantizer"])
        data_cfg = QatDataConfig(**merged["data"])
    except TypeError as exc:
        raise ValidationError(f"bad qat config: {exc}") from exc
    out_dir = Path(args.out)
    _echo_config(out_dir, merged)
    final, series = toy_qat_train(model_cfg, quant_cfg, data_cfg)
    for s in series.values():
        _write_series_csv(out_dir, s)
    summary = dict(final)
    summary["transition_counts"] = {
        name: metric_scale_transitions(s)
        for name, s in series.items()
        if name.startswith("scale_exp/")
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 2 if final["divergence_step"] is not None else 0


# ------------------------------------------------------------- simulate-int


def _load_layer(layer_path: str) -> QuantizedLayer:
    path = Path(layer_path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read layer spec {layer_path}: {exc}") from exc
    required = {
        "weight_codes", "bias_codes", "weight_exponent", "input_exponent",
        "bias_exponent", "output_exponent",
    }
    missing = required - set(spec)
    if missing:
        raise ValidationError(f"layer spec missing keys: {sorted(missing)}")
    base = path.parent
    return QuantizedLayer(
        weight_codes=read_tensor(base / spec["weight_codes"]),
        weight_scale=Po2Scale(spec["weight_exponent"]),
        bias_codes=read_tensor(base / spec["bias_codes"]),
        bias_scale=Po2Scale(spec["bias_exponent"]),
        input_scale=Po2Scale(spec["input_exponent"]),
        output_scale=Po2Scale(spec["output_exponent"]),
        output_cfg=QuantConfig(spec.get("output_bits", 8), spec.get("output_signed", True)),
        weight_cfg=QuantConfig(spec.get("weight_bits", 8), spec.get("weight_signed", True)),
        input_cfg=QuantConfig(spec.get("input_bits", 8), spec.get("input_signed", True)),
    )


def _cmd_simulate_int(args) -> int:
    layer = _load_layer(args.layer)
    x = read_tensor(args.input)
    out = int_forward(layer, x)
    if args.output is not None:
        write_tensor(args.output, out)
    if args.check:
        ref = float_reference_forward(layer, x)
        mismatch = np.flatnonzero(out.ravel() != ref.ravel())
        if mismatch.size:
            print(f"FAIL first_mismatch_index={int(mismatch[0])}")
            return 2
        print(f"PASS n={out.size}")
        return 0
    print(json.dumps({"n_outputs": int(out.size)}))
    return 0


# ------------------------------------------------------------------ parsing


def _args_config(args) -> dict:
    skip = {"func", "config", "out"}
    return {
        k: v for k, v in sorted(vars(args).items())
        if k not in skip and not callable(v)
    }


def _add_quant_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bits", type=int, default=4, help="code bit width")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--signed", dest="unsigned", action="store_false",
                       help="signed code range (default)")
    group.add_argument("--unsigned", dest="unsigned", action="store_true",
                       help="unsigned code range")
    p.set_defaults(unsigned=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="po2quant", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("fit-scale", help="fit a power-of-two scale by least squares")
    p.add_argument("--input", required=True, help="PQT1 tensor file")
    _add_quant_flags(p)
    p.add_argument("--n-iters", type=int, default=2)
    p.add_argument("--line-search", type=int, default=0, metavar="N")
    p.add_argument("--sigma-outlier", type=float, default=None,
                   help="outlier mask threshold in stddevs; 'inf' masks nothing")
    p.add_argument("--gva-state", default=None, help="PQT1 tensor of moment weights")
    p.add_argument("--delta-init", type=float, default=None)
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=_cmd_fit_scale)

    p = sub.add_parser("quantize", help="quantize a tensor with a fitted or given scale")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_quant_flags(p)
    p.add_argument("--exponent", type=int, default=None, help="fixed scale exponent")
    p.add_argument("--n-iters", type=int, default=2)
    p.add_argument("--line-search", type=int, default=2, metavar="N")
    p.add_argument("--codes", action="store_true", help="write integer codes instead")
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("grad-fit", help="train a scale by gradient descent")
    p.add_argument("--input", required=True)
    _add_quant_flags(p)
    p.add_argument("--mode", choices=("ceil", "round", "rtlm"), default="ceil")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--freeze-at", default=None, metavar="STEP|none")
    p.add_argument("--seed", type=int, default=0,
                   help="recorded for reproducibility; the fit itself is deterministic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_grad_fit)

    for name, helptext in (
        ("toy-rtlm", "exponent-transition experiment under input perturbations"),
        ("toy-converge", "oscillation-and-freeze experiment on a fixed input"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--noise-sigma", type=float, default=None)
        p.add_argument("--mode", choices=("ceil", "round", "rtlm"), default=None)
        p.add_argument("--freeze-at", type=int, default=None)
        p.set_defaults(func=_cmd_toy_rtlm if name == "toy-rtlm" else _cmd_toy_converge)

    p = sub.add_parser("qat", help="toy quantization-aware training run")
    p.add_argument("--config", default=None, help="JSON with model/quantizer/data sections")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--family", choices=("none", "msqe", "grad"), default=None)
    p.set_defaults(func=_cmd_qat)

    p = sub.add_parser("simulate-int", help="integer-only layer evaluation")
    p.add_argument("--layer", required=True, help="layer JSON spec")
    p.add_argument("--input", required=True, help="PQT1 tensor of input codes")
    p.add_argument("--output", default=None, help="write output codes here")
    p.add_argument("--check", action="store_true",
                   help="compare against the float reference and report PASS/FAIL")
    p.set_defaults(func=_cmd_simulate_int)

    return parser


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScaleRangeError, DegenerateCodesError, Po2QuantError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
