"""Command-line entry point: dataset synthesis, training, evaluation, the
zero-velocity baseline, transform/gradient self-checks, and checkpoint
inspection.

Runs are configured by a flat key=value text file plus command-line
overrides; every run writes its resolved configuration next to its outputs.
Exit codes are distinct per error class:

    0  success
    2  usage error (bad flags; raised by argparse)
    3  configuration error (unknown key, bad value, missing file)
    4  data error (missing/empty dataset, malformed clip, unwritable path)
    5  checkpoint error (unreadable, or config mismatch with the request)
    6  training aborted (non-finite loss or gradient)
    7  self-check suite failure
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import datametrics as dm
from . import model as model_mod
from . import training as tr
from . import transforms

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CHECKPOINT = 5
EXIT_TRAINING = 6
EXIT_SELFCHECK = 7

OUT_DIR_ENV = "HAARMOTION_OUT_DIR"  # the only environment variable honored
RESOLVED_NAME = "config.resolved"
REPORT_NAME = "report.txt"


class ConfigError(Exception):
    """Bad run configuration (unknown key, unparsable value, bad path)."""


class DataError(Exception):
    """Dataset problems: missing directory, no clips, malformed files."""


# ------------------------------------------------------------- run config


@dataclass
class RunConfig:
    """Flat bag of every tunable, loadable from key=value text.

    `model_seed` feeds parameter initialization; `seed` drives everything
    else (sampling, augmentation, synthesis, evaluation draws).
    """

    # model
    frames_in: int = 50
    frames_out: int = 10
    joints: int = 22
    num_blocks: int = 4
    levels: int = 3
    fc_per_level: tuple = (4, 2, 1)
    use_dct: bool = True
    use_ln: bool = True
    model_seed: int = 0
    # learning-rate schedule
    base_lr: float = 3e-4
    drop_lr: float = 6e-5
    drop_at: int = 30000
    decay: float = 0.85
    decay_every: int = 3000
    schedule_total: int = 80000
    # augmentation
    flip_prob: float = 0.5
    reverse_prob: float = 0.5
    flip_axis: int = 1
    # training loop
    iterations: int = 80000
    batch_size: int = 256
    log_every: int = 100
    checkpoint_every: int = 1000
    # run plumbing
    data_dir: str = ""
    out_dir: str = ""
    seed: int = 0

    MODEL_KEYS = (
        "frames_in", "frames_out", "joints", "num_blocks", "levels",
        "fc_per_level", "use_dct", "use_ln", "model_seed",
    )

    def model_config(self) -> model_mod.ModelConfig:
        return model_mod.ModelConfig(
            frames_in=self.frames_in, frames_out=self.frames_out,
            joints=self.joints, num_blocks=self.num_blocks,
            levels=self.levels, fc_per_level=tuple(self.fc_per_level),
            use_dct=self.use_dct, use_ln=self.use_ln, seed=self.model_seed,
        )

    def schedule(self) -> tr.Schedule:
        return tr.Schedule(
            base_lr=self.base_lr, drop_lr=self.drop_lr, drop_at=self.drop_at,
            decay=self.decay, decay_every=self.decay_every,
            total=self.schedule_total,
        )

    def augment_config(self) -> tr.AugmentConfig:
        return tr.AugmentConfig(
            flip_prob=self.flip_prob, reverse_prob=self.reverse_prob,
            flip_axis=self.flip_axis,
        )

    def train_settings(self) -> tr.TrainSettings:
        return tr.TrainSettings(
            model=self.model_config(), iterations=self.iterations,
            batch_size=self.batch_size, augment=self.augment_config(),
            schedule=self.schedule(), seed=self.seed,
            log_every=self.log_every, checkpoint_every=self.checkpoint_every,
        )


# field name -> concrete type, taken from the defaults
_FIELDS = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    """Parse a raw string into the declared field type."""
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind.__name__}")


def parse_config_lines(text: str, source: str):
    """key=value lines -> dict; '#' comments and blank lines are skipped."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(args) -> tuple[RunConfig, set]:
    """Defaults <- config file <- --set overrides <- dedicated flags.

    Returns the config plus the set of explicitly assigned keys (used by
    eval to distinguish "requested this model" from "fell back to defaults").
    """
    config = RunConfig()
    explicit: set[str] = set()

    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        for key, value in parse_config_lines(text, path).items():
            setattr(config, key, value)
            explicit.add(key)

    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"--set: unknown key {key!r}")
        setattr(config, key, _coerce(key, raw))
        explicit.add(key)

    # dedicated flags win over file and --set
    for flag, key in (
        ("data_dir", "data_dir"), ("out_dir", "out_dir"), ("seed", "seed"),
        ("iterations", "iterations"), ("batch_size", "batch_size"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, key, value)
            explicit.add(key)
    if getattr(args, "no_dct", False):
        config.use_dct = False
        explicit.add("use_dct")
    if getattr(args, "no_ln", False):
        config.use_ln = False
        explicit.add("use_ln")

    if not config.out_dir:
        config.out_dir = os.environ.get(OUT_DIR_ENV, "") or "runs"
    return config, explicit


def resolved_text(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def write_resolved(config: RunConfig) -> None:
    with open(os.path.join(config.out_dir, RESOLVED_NAME), "w",
              encoding="utf-8") as fh:
        fh.write(resolved_text(config))


# ------------------------------------------------------------------ helpers


def ensure_out_dir(config: RunConfig) -> None:
    try:
        os.makedirs(config.out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output dir {config.out_dir!r}: {exc}")
    if not os.access(config.out_dir, os.W_OK):
        raise DataError(f"output dir {config.out_dir!r} is not writable")


def load_clips(data_dir: str) -> list:
    if not data_dir:
        raise DataError("no dataset directory given (data_dir)")
    if not os.path.isdir(data_dir):
        raise DataError(f"dataset directory {data_dir!r} does not exist")
    names = sorted(n for n in os.listdir(data_dir) if n.endswith(".motb"))
    if not names:
        raise DataError(f"no .motb clips in {data_dir!r}")
    clips = []
    for name in names:
        path = os.path.join(data_dir, name)
        try:
            clips.append(dm.read_clip(path))
        except dm.ClipFormatError as exc:
            raise DataError(f"{path}: {exc}")
    return clips


def _sync_model_fields(config: RunConfig, mc) -> None:
    """Copy a checkpoint's model config into the run manifest fields."""
    config.frames_in, config.frames_out = mc.frames_in, mc.frames_out
    config.joints, config.num_blocks = mc.joints, mc.num_blocks
    config.levels, config.fc_per_level = mc.levels, tuple(mc.fc_per_level)
    config.use_dct, config.use_ln = mc.use_dct, mc.use_ln
    config.model_seed = mc.seed


def _print_report(report) -> None:
    ms = "\t".join(str(m) for m in dm.EVAL_MILLISECONDS)
    overall = "\t".join(f"{v:.2f}" for v in report.overall)
    print(f"ms\t{ms}")
    print(f"mpjpe\t{overall}")


# ------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    config, _ = resolve_config(args)
    ensure_out_dir(config)
    clips = dm.synth_generate(
        args.clips, joints=config.joints, fps=args.fps, length=args.frames,
        seed=config.seed,
    )
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}.motb"
        dm.write_clip(clip, os.path.join(config.out_dir, name))
        print(f"{name}\taction={clip.action}\tframes={clip.num_frames}"
              f"\tjoints={clip.joints}\tfps={clip.fps}")
    write_resolved(config)
    print(f"wrote {len(clips)} clips to {config.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, _ = resolve_config(args)
    clips = load_clips(config.data_dir)
    ensure_out_dir(config)
    write_resolved(config)
    result = tr.train(clips, config.train_settings(), config.out_dir)
    if result.history:
        last = result.history[-1]
        print(f"iteration {last.iteration}: total={last.total:.6f} "
              f"l_re={last.l_re:.6f} l_v={last.l_v:.6f}")
    print(f"final checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config, explicit = resolve_config(args)
    baseline = getattr(args, "baseline", False)
    checkpoint = getattr(args, "checkpoint", None)
    if baseline and checkpoint:
        raise ConfigError("--baseline and --checkpoint are mutually exclusive")
    if not baseline and not checkpoint:
        raise ConfigError("eval needs --checkpoint PATH or --baseline")

    clips = load_clips(config.data_dir)
    net = None
    if checkpoint:
        net, _ = model_mod.load_checkpoint(checkpoint)
        requested = config.model_config()
        if any(k in explicit for k in RunConfig.MODEL_KEYS) \
                and net.config != requested:
            print(f"checkpoint config: {net.config}", file=sys.stderr)
            print(f"requested config:  {requested}", file=sys.stderr)
            raise model_mod.CheckpointError(
                "checkpoint does not match the requested model config"
            )
        _sync_model_fields(config, net.config)  # keep the manifest honest

    frames_in = net.config.frames_in if net else config.frames_in
    report = dm.evaluate(clips, config.seed, net=net,
                         per_action=args.per_action, frames_in=frames_in)
    _print_report(report)
    ensure_out_dir(config)
    with open(os.path.join(config.out_dir, REPORT_NAME), "w",
              encoding="utf-8") as fh:
        fh.write(dm.format_report(report))
    write_resolved(config)
    print(f"report: {os.path.join(config.out_dir, REPORT_NAME)}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    net, iteration = model_mod.load_checkpoint(args.checkpoint)
    print(f"iteration={iteration}")
    print(f"config={net.config}")
    total = 0
    for name, value in net.named_parameters():
        rows, cols = value.data.shape
        total += rows * cols
        norm = float(np.linalg.norm(value.data))
        print(f"{name}\t{rows}x{cols}\tnorm={norm:.6e}")
    print(f"parameters={total}")
    return EXIT_OK


# -------------------------------------------------------------- selfcheck


def _suite_roundtrip(rng, grids: int, single: bool):
    """Haar zoom round-trip and Parseval on random grids; returns max errors."""
    worst_rt = 0.0
    worst_pars = 0.0
    dtype = np.float32 if single else np.float64
    for _ in range(grids):
        s = 2 * int(rng.integers(1, 65))
        t = int(rng.integers(1, 65))
        grid = rng.standard_normal((s, t)).astype(dtype)
        zoomed = transforms.haar_zoom_in(transforms.SpectrumGrid(grid))
        back = transforms.haar_zoom_out(zoomed)
        worst_rt = max(worst_rt, float(np.abs(back.data - grid).max()))
        grid_sq = float(np.square(grid, dtype=np.float64).sum())
        zoom_sq = float(np.square(zoomed.data, dtype=np.float64).sum())
        rel = abs(zoom_sq - grid_sq) / max(grid_sq, 1e-30)
        worst_pars = max(worst_pars, rel)
    return worst_rt, worst_pars


def _suite_dct():
    worst = 0.0
    for n in (10, 25, 50):
        d = transforms.dct_matrix(n)
        worst = max(worst, float(np.abs(d @ d.T - np.eye(n)).max()))
    return worst


def _suite_gradients(seeds: int, rng):
    """FD checks on every graph op, then one sampled full-network loss."""
    worst = 0.0
    for seed in range(seeds):
        g = np.random.default_rng(seed)
        x = ad.Value(g.standard_normal((4, 6)))
        p = ad.AffineParams(g.standard_normal((6, 6)), g.standard_normal(6))
        ln = ad.LayerNormParams(g.standard_normal(6), g.standard_normal(6))
        cases = (
            lambda: ad.sum_all(ad.affine(x, p)),
            lambda: ad.sum_all(ad.layer_norm(x, ln)),
            lambda: ad.sum_all(ad.add(x, ad.affine(x, p))),
            lambda: ad.sum_all(ad.transpose(ad.transpose(x, blocks=2), blocks=2)),
            lambda: ad.sum_all(ad.slice_rows(x, 1, 3)),
            lambda: ad.sum_all(ad.fixed_linear(x, "dct")),
            lambda: ad.sum_all(ad.fixed_linear(x, "idct")),
            lambda: ad.sum_all(ad.fixed_linear(x, "haar_in")),
            lambda: ad.sum_all(
                ad.fixed_linear(ad.fixed_linear(x, "haar_in"), "haar_out")
            ),
        )
        for fn in cases:
            worst = max(worst, ad.grad_check(fn, [x, p.weight, p.bias, ln.gamma, ln.beta]))

    cfg = model_mod.ModelConfig()
    net = model_mod.build(cfg)
    window = 400.0 * np.random.default_rng(99).standard_normal(
        (1, cfg.frames_in + cfg.frames_out, cfg.channels)
    )
    inputs = model_mod.encode_windows(window[:, : cfg.frames_in])
    resid_target = (
        window[0, cfg.frames_in:] - window[0, cfg.frames_in - 1 : cfg.frames_in]
    ) / model_mod.MM_PER_UNIT
    leaves = [v for _, v in net.named_parameters()]

    def network_loss():
        pred = model_mod.forward_value(net, ad.Value(inputs))
        node, _ = tr.loss_value(pred, resid_target, batch=1)
        return node

    worst = max(
        worst, ad.grad_check(network_loss, leaves, max_coords=2, rng=rng)
    )
    return worst


def _suite_ln_guard(inject: bool):
    """The zero-variance division guard; injection forces eps=0."""
    x = ad.Value(np.ones((2, 4)))
    params = ad.LayerNormParams(np.ones(4), np.zeros(4))
    eps = 0.0 if inject else 1e-8
    try:
        ad.layer_norm(x, params, eps=eps)
    except FloatingPointError as exc:
        return False, f"division guard tripped: {exc}"
    return True, "ok"


def cmd_selfcheck(args) -> int:
    single = args.precision == "single"
    rt_tol = 1e-5 if single else 1e-12
    pars_tol = 1e-6 if single else 1e-12
    grad_tol = 1e-4 if single else 1e-6
    rng = np.random.default_rng(args.seed or 0)

    failures = []
    rt, pars = _suite_roundtrip(rng, args.grids, single)
    print(f"haar-roundtrip\tmax={rt:.3e}\ttol={rt_tol:.0e}")
    if rt >= rt_tol:
        failures.append("haar-roundtrip")
    print(f"parseval\tmax={pars:.3e}\ttol={pars_tol:.0e}")
    if pars >= pars_tol:
        failures.append("parseval")

    dct = _suite_dct()
    print(f"dct-orthonormal\tmax={dct:.3e}\ttol=1e-12")
    if dct >= 1e-12:
        failures.append("dct-orthonormal")

    grad = _suite_gradients(args.grad_seeds, rng)
    print(f"gradients\tmax={grad:.3e}\ttol={grad_tol:.0e}")
    if grad >= grad_tol:
        failures.append("gradients")

    ok, detail = _suite_ln_guard(args.inject == "ln-eps-zero")
    print(f"layer-norm-guard\t{detail}")
    if not ok:
        failures.append("layer-norm-guard")

    if failures:
        print(f"FAIL: {', '.join(failures)}", file=sys.stderr)
        return EXIT_SELFCHECK
    print("all suites passed")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_config_flags(sub, data=True):
    sub.add_argument("--config", metavar="FILE",
                     help="key=value run configuration file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a single config key (repeatable)")
    sub.add_argument("--out-dir", dest="out_dir",
                     help=f"output directory (default: ${OUT_DIR_ENV} or ./runs)")
    sub.add_argument("--seed", type=int, help="run seed")
    if data:
        sub.add_argument("--data-dir", dest="data_dir",
                         help="directory of .motb clips")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haarmotion",
        description="Multi-resolution motion prediction toolkit",
        epilog="exit codes: 0 ok, 2 usage, 3 config, 4 data, "
               "5 checkpoint, 6 training aborted, 7 selfcheck failure",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="write synthetic .motb clips")
    _add_config_flags(synth, data=False)
    synth.add_argument("--clips", type=int, default=32,
                       help="number of clips to generate")
    synth.add_argument("--frames", type=int, default=125,
                       help="frames per clip")
    synth.add_argument("--fps", type=int, default=25, help="frame rate")
    synth.set_defaults(func=cmd_synth)

    train = subs.add_parser("train", help="train a model on .motb clips")
    _add_config_flags(train)
    train.add_argument("--iterations", type=int, help="override iteration count")
    train.add_argument("--batch-size", dest="batch_size", type=int,
                       help="override batch size")
    train.add_argument("--no-dct", action="store_true",
                       help="disable the spectral input/output transform")
    train.add_argument("--no-ln", action="store_true",
                       help="disable layer normalization")
    train.set_defaults(func=cmd_train)

    for name in ("eval", "baseline"):
        ev = subs.add_parser(
            name,
            help="evaluate a checkpoint" if name == "eval"
            else "evaluate the repeat-last-frame baseline (eval --baseline)",
        )
        _add_config_flags(ev)
        ev.add_argument("--per-action", dest="per_action", type=int,
                        default=256, help="evaluation windows per action")
        if name == "eval":
            ev.add_argument("--checkpoint", help="checkpoint directory")
            ev.add_argument("--baseline", action="store_true",
                            help="score the repeat-last-frame baseline")
        ev.set_defaults(func=cmd_eval, baseline=(name == "baseline"))

    check = subs.add_parser("selfcheck", help="run transform and gradient suites")
    check.add_argument("--precision", choices=("single", "double"),
                       default="single",
                       help="corpus precision; double tightens tolerances")
    check.add_argument("--grids", type=int, default=300,
                       help="random grids for the round-trip suite")
    check.add_argument("--grad-seeds", dest="grad_seeds", type=int, default=5,
                       help="seeds per per-op gradient check")
    check.add_argument("--inject", choices=("ln-eps-zero",),
                       help="inject a known defect to prove it is caught")
    check.add_argument("--seed", type=int, default=0, help="suite seed")
    check.set_defaults(func=cmd_selfcheck)

    inspect = subs.add_parser("inspect", help="dump a checkpoint manifest")
    inspect.add_argument("checkpoint", help="checkpoint directory")
    inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except dm.SamplingError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except model_mod.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except tr.TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
