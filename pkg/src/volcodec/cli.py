"""Command-line front end.

Verbs: train, compress, decompress, eval, gradcheck, synth, inspect.
stdout carries machine-parsable TSV; human diagnostics go to stderr.

Exit codes are stable API:
    0  success
    2  configuration error (bad flags, bad config file, bad keys)
    3  data error (missing/invalid input files, depth mismatches)
    4  numeric failure during training (non-finite loss)
    5  weights digest mismatch on decompress
    6  corrupt or truncated compressed stream
    7  gradient check above tolerance
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from . import params as params_mod
from . import volume as volume_mod
from .codec import STREAM_MAGIC, compress_volume, decompress_volume
from .errors import (
    ConfigError,
    DepthMismatch,
    DigestMismatch,
    DimensionMismatch,
    NonFiniteLoss,
    SampleOutOfRange,
    UnsupportedFormat,
    VolcodecError,
)
from .params import (
    WEIGHTS_MAGIC,
    load_weights,
    parameter_count,
    save_weights,
)
from .training import (
    TrainConfig,
    evaluate,
    grad_check,
    gradcheck_params,
    train,
    write_loss_curve,
)
from .volume import (
    RVF_MAGIC,
    SYNTH_KINDS,
    bpp,
    read_rvf_file,
    synth_volume,
    write_rvf_file,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_DIGEST = 5
EXIT_CORRUPT = 6
EXIT_GRADCHECK = 7

GRADCHECK_TOL = 1e-4

_DATA_ERRORS = (SampleOutOfRange, DepthMismatch, DimensionMismatch,
                UnsupportedFormat)


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _row(*cells) -> None:
    print("\t".join(str(c) for c in cells))


# --- config files ---------------------------------------------------------


_CONFIG_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_BOOL_KEYS = {"shuffle", "zero_hidden"}
_INT_KEYS = {"epochs", "updated_stride", "seed", "m", "checkpoint_every"}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "epsilon"}
_OPT_FLOAT_KEYS = {"scale_l", "clip_norm"}


def _parse_config_value(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: not a boolean: {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _OPT_FLOAT_KEYS:
            return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: bad value {raw!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def load_config_file(path) -> dict:
    """key=value lines, '#' starts a comment, unknown keys are errors."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_config_value(key, raw)
    return values


def _build_train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config is not None:
        for key, val in load_config_file(args.config).items():
            setattr(cfg, key, val)
    overrides = {
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "updated_stride": args.stride,
        "seed": args.seed,
        "m": args.m,
        "scale_l": args.scale_l,
        "clip_norm": args.clip_norm,
        "checkpoint_every": args.checkpoint_every,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    if args.shuffle:
        cfg.shuffle = True
    if args.zero_hidden:
        cfg.zero_hidden = True
    cfg.validate()
    return cfg


# --- dataset loading --------------------------------------------------------


def _load_dataset(data_dir) -> "tuple[list, list]":
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {data_dir}")
    paths = sorted(root.glob("*.rvf"))
    vols = [read_rvf_file(p) for p in paths]
    return vols, paths


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _build_train_config(args)
    vols, paths = _load_dataset(args.data_dir)
    if not vols:
        return _fail(EXIT_DATA, f"no .rvf volumes in {args.data_dir}")
    depths = {v.depth_bits for v in vols}
    if len(depths) > 1:
        return _fail(EXIT_DATA,
                     f"mixed sample depths in {args.data_dir}: {sorted(depths)}")
    print(f"training on {len(vols)} volumes from {args.data_dir}",
          file=sys.stderr)
    ckpt_dir = args.checkpoint_dir
    if ckpt_dir is not None:
        Path(ckpt_dir).mkdir(parents=True, exist_ok=True)

    def log(row):
        epoch, bits, mean_bpp = row
        print(f"epoch {epoch}: mean_loss_bits={bits:.1f} "
              f"mean_bpp={mean_bpp:.4f}", file=sys.stderr)

    p, curve = train(vols, cfg, checkpoint_dir=ckpt_dir, log=log)
    save_weights(p, args.out_weights)
    curve_path = args.curve or (str(args.out_weights) + ".curve.csv")
    write_loss_curve(curve_path, curve)
    _row("parameters", parameter_count(p))
    _row("epochs", len(curve))
    _row("weights", args.out_weights)
    _row("curve", curve_path)
    if curve:
        _row("final_mean_bpp", repr(curve[-1][2]))
    return EXIT_OK


def cmd_compress(args) -> int:
    p = load_weights(args.weights)
    vol = read_rvf_file(args.input)
    blob = compress_volume(vol, p, zero_hidden=args.zero_hidden)
    Path(args.output).write_bytes(blob)
    _row("bytes", len(blob))
    _row("bpp", repr(bpp(len(blob), vol)))
    return EXIT_OK


def cmd_decompress(args) -> int:
    p = load_weights(args.weights)
    blob = Path(args.input).read_bytes()
    vol = decompress_volume(blob, p, zero_hidden=args.zero_hidden)
    write_rvf_file(vol, args.output)
    _row("wrote", args.output)
    _row("dims", f"{vol.t}x{vol.h}x{vol.w}")
    return EXIT_OK


def cmd_eval(args) -> int:
    p = load_weights(args.weights)
    vols, paths = _load_dataset(args.data_dir)
    report = evaluate(vols, p, zero_hidden=args.zero_hidden, jobs=args.jobs)
    _row("volume", "bpp")
    for path, value in zip(paths, report.per_volume):
        _row(path.name, repr(value))
    _row("mean", "NA" if report.mean is None else repr(report.mean))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    p = gradcheck_params(m=args.m, depth_bits=8, seed=args.seed)
    vol = synth_volume("smooth3d", 3, 8, 8, 8, args.seed)
    report = grad_check(p, vol.samples, epsilon=1e-4,
                        n_coords=args.coords, seed=args.seed)
    _row("tensor", "worst_rel_err", "checked", "excluded")
    for name, tc in report.per_tensor.items():
        _row(name, repr(tc.worst), tc.checked, tc.excluded)
    _row("total", repr(report.worst), report.checked, report.excluded)
    if report.worst > GRADCHECK_TOL:
        print(f"gradient check failed: {report.worst:g} > {GRADCHECK_TOL:g}",
              file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        t, h, w = (int(x) for x in args.dims.lower().split("x"))
    except ValueError:
        return _fail(EXIT_CONFIG, f"bad dims {args.dims!r}, expected TxHxW")
    vol = synth_volume(args.kind, t, h, w, args.depth, args.seed)
    write_rvf_file(vol, args.output)
    _row("wrote", args.output)
    _row("dims", f"{vol.t}x{vol.h}x{vol.w}")
    _row("depth", vol.depth_bits)
    return EXIT_OK


def cmd_inspect(args) -> int:
    data = Path(args.input).read_bytes()
    magic = data[:4]
    if magic == RVF_MAGIC:
        vol = volume_mod.read_rvf(data)
        _row("format", "rvf")
        _row("depth", vol.depth_bits)
        _row("dims", f"{vol.t}x{vol.h}x{vol.w}")
        _row("samples", vol.num_samples)
    elif magic == WEIGHTS_MAGIC:
        p = params_mod.parse_srlw(data)
        _row("format", "weights")
        _row("m", p.m)
        _row("kernel", p.kernel)
        _row("k_dsc", p.k_dsc)
        _row("depth", p.depth_bits)
        _row("scale_l", repr(p.scale_l))
        _row("parameters", parameter_count(p))
        _row("digest", params_mod.weights_digest(p).hex())
    elif magic == STREAM_MAGIC:
        import struct

        from .codec import _HEADER

        if len(data) < _HEADER.size:
            return _fail(EXIT_CORRUPT, "stream shorter than its header")
        (_, version, depth, m, scale_l, t, h, w,
         digest, n_esc) = _HEADER.unpack_from(data, 0)
        _row("format", "stream")
        _row("version", version)
        _row("depth", depth)
        _row("m", m)
        _row("scale_l", repr(float(scale_l)))
        _row("dims", f"{t}x{h}x{w}")
        _row("digest", digest.hex())
        _row("escape_count", n_esc)
        esc_size = 9 if depth == 8 else 10
        off = _HEADER.size + n_esc * esc_size
        if len(data) >= off + 8:
            (payload_len,) = struct.unpack_from("<Q", data, off)
            _row("payload_bytes", payload_len)
        _row("bpp", repr(bpp(len(data), (t, h, w))))
    else:
        return _fail(EXIT_DATA, f"unrecognized magic {magic!r}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="volcodec",
        description="Lossless volumetric compression with a streaming "
                    "recurrent-convolutional probability model.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train weights on a directory of .rvf volumes")
    t.add_argument("data_dir")
    t.add_argument("out_weights")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--stride", type=int, help="updated stride (window length)")
    t.add_argument("--seed", type=int)
    t.add_argument("--m", type=int, help="model width")
    t.add_argument("--scale-l", type=float, dest="scale_l")
    t.add_argument("--clip-norm", type=float, dest="clip_norm")
    t.add_argument("--shuffle", action="store_true")
    t.add_argument("--zero-hidden", action="store_true",
                   help="ablation: zero the recurrent state everywhere")
    t.add_argument("--curve", help="loss-curve CSV path")
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="compress one .rvf volume")
    c.add_argument("weights")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--zero-hidden", action="store_true")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decompress a stream back to .rvf")
    d.add_argument("weights")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--zero-hidden", action="store_true")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("eval", help="measured BPP over a directory of volumes")
    e.add_argument("weights")
    e.add_argument("data_dir")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--zero-hidden", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=220)
    g.add_argument("--m", type=int, default=16)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic .rvf volume")
    s.add_argument("kind", choices=SYNTH_KINDS)
    s.add_argument("dims", help="TxHxW, e.g. 8x64x64")
    s.add_argument("output")
    s.add_argument("--depth", type=int, default=8, choices=(8, 12, 16))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    i = sub.add_parser("inspect", help="print any .rvf/.srlw/.srlv header")
    i.add_argument("input")
    i.set_defaults(func=cmd_inspect)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DigestMismatch as exc:
        return _fail(EXIT_DIGEST, f"digest mismatch: {exc}")
    except NonFiniteLoss as exc:
        return _fail(EXIT_NUMERIC, f"numeric failure: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config error: {exc}")
    except _DATA_ERRORS as exc:
        return _fail(EXIT_DATA, f"data error: {exc}")
    except VolcodecError as exc:
        # remaining family: magic/truncation/corruption/interval errors
        return _fail(EXIT_CORRUPT, f"corrupt input: {exc}")
    except OSError as exc:
        return _fail(EXIT_DATA, f"i/o error: {exc}")


if __name__ == "__main__":
    sys.exit(main())
