"""Command-line entry point.

Sizes are written ``HxW`` (grid and output maps alike). A config file of
``key: value`` lines (first line ``unifiedvl-config v1``) can preset the
vocabulary layout and depth spec; it is read from ``--config`` or the
``YVL_CONFIG`` environment variable, and explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import depth as depthmod
from . import grammar, rle
from .dense import DecodeConfig, LogitTensor, decode_depth, decode_semseg, grounding_then_segment, read_logits
from .errors import ConfigError, VLError
from .metrics import ScoredBox, box_iou, ciou, delta1, map_coco, miou, pckh
from .rewards import FilterConfig, RewardConfig, RolloutGroup, admit, kl_metric, task_reward
from .scaling import fit_power_law
from .vocab import VocabConfig, build_vocab

CONFIG_HEADER = "unifiedvl-config v1"
_VOCAB_KEYS = ("text_vocab_size", "image_codebook_size", "coords_per_axis", "depth_bins")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def emit(out: str | None, data: str | bytes) -> None:
    if out:
        atomic_write(out, data)
    elif isinstance(data, bytes):
        sys.stdout.buffer.write(data)
    else:
        sys.stdout.write(data)


def read_config(path: str | None) -> dict[str, str]:
    path = path or os.environ.get("YVL_CONFIG")
    if not path:
        return {}
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CONFIG_HEADER:
        raise ConfigError(f"config file must start with {CONFIG_HEADER!r}")
    out = {}
    for ln in lines[1:]:
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, sep, value = ln.partition(":")
        if not sep:
            raise ConfigError(f"bad config line {ln!r}")
        out[key.strip()] = value.strip()
    return out


def vocab_from(args, conf: dict[str, str]):
    kw = {k: int(conf[k]) for k in _VOCAB_KEYS if k in conf}
    for k in _VOCAB_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    return build_vocab(VocabConfig(**kw))


def spec_from(args, conf: dict[str, str]) -> depthmod.QuantSpec:
    name = getattr(args, "spec", None) or conf.get("depth_spec")
    if name:
        try:
            return depthmod.BUILTIN_SPECS[name]
        except KeyError:
            raise ConfigError(f"unknown depth spec {name!r}; choose from {sorted(depthmod.BUILTIN_SPECS)}") from None
    if "depth_scheme" in conf:
        scheme = conf["depth_scheme"]
        return depthmod.QuantSpec(scheme, float(conf["d_min"]), float(conf["d_max"]), int(conf.get("bins", 1000)),
                                  conf.get("out_of_range", "ignore" if scheme == "log_uniform" else "clamp"))
    raise ConfigError("no depth spec given (--spec or depth_spec in config)")


def size(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def box_arg(text: str) -> grammar.BoundingBox:
    try:
        return grammar.BoundingBox(*(int(v) for v in text.split(",")))
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"expected x1,y1,x2,y2, got {text!r}: {exc}") from None


def report(values: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(values, sort_keys=True) + "\n"
    return "".join(f"{k}:{v}\n" for k, v in values.items())


def pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def read_map(path: str) -> np.ndarray:
    return rle.parse_label_map(Path(path).read_text())


def read_depth(path: str) -> np.ndarray:
    return depthmod.parse_depth_map(Path(path).read_text())[0]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_vocab_build(args, conf):
    emit(args.out, vocab_from(args, conf).manifest())


def cmd_emit(args, conf):
    vocab = vocab_from(args, conf)
    value = grammar.loads_lines(Path(args.input).read_text(), args.kind)
    emit(args.out, grammar.emit_text(value, vocab, strict=not args.lossy) + "\n")


def cmd_parse(args, conf):
    vocab = vocab_from(args, conf)
    text = args.text if args.text is not None else Path(args.input).read_text().strip()
    value = grammar.parse_text(text, args.kind, vocab)
    emit(args.out, grammar.dumps_lines(value))


def cmd_rle_encode(args, conf):
    labels = read_map(args.input)
    h, w = labels.shape
    emit(args.out, f"{h} {w}\n{rle.rle_encode(labels)}\n")


def cmd_rle_decode(args, conf):
    lines = Path(args.input).read_text().splitlines()
    if not lines:
        raise VLError("empty RLE file")
    h, w = (int(t) for t in lines[0].split())
    payload = lines[1].strip() if len(lines) > 1 else ""
    if payload.startswith("<mask>"):
        payload = rle.unwrap_mask(payload)
    emit(args.out, rle.format_label_map(rle.rle_decode(payload, h, w)))


def cmd_depth_quantize(args, conf):
    spec = spec_from(args, conf)
    emit(args.out, rle.format_label_map(depthmod.quantize(read_depth(args.input), spec)))


def cmd_depth_dequantize(args, conf):
    spec = spec_from(args, conf)
    emit(args.out, depthmod.format_depth_map(depthmod.dequantize(read_map(args.input), spec), spec))


def _outputs(args):
    if args.out and len(args.out) != len(args.logits):
        raise VLError(f"{len(args.logits)} logit files but {len(args.out)} outputs")
    return args.out or [None] * len(args.logits)


def cmd_decode_semseg(args, conf):
    vocab = vocab_from(args, conf)
    cats = [vocab.category_token_ids(c) for c in args.cats.split(",")]
    cfg = DecodeConfig(temperature=args.tau, background_mode=args.background)

    def one(path):
        z = LogitTensor(read_logits(Path(path).read_bytes()).reshape(args.grid[0] * args.grid[1], -1))
        return rle.format_label_map(decode_semseg(z, cats, cfg, args.grid, args.size))

    for out, text in zip(_outputs(args), pmap(one, args.logits, args.jobs)):
        emit(out, text)


def cmd_decode_depth(args, conf):
    spec = spec_from(args, conf)

    def one(path):
        z = LogitTensor(read_logits(Path(path).read_bytes()).reshape(args.grid[0] * args.grid[1], -1))
        return depthmod.format_depth_map(decode_depth(z, spec, args.grid, args.size), spec)

    for out, text in zip(_outputs(args), pmap(one, args.logits, args.jobs)):
        emit(out, text)


def cmd_decode_refseg(args, conf):
    h, w = args.size

    def one(path):
        fg_bg = read_logits(Path(path).read_bytes()).reshape(args.grid[0] * args.grid[1], 2)
        mask = grounding_then_segment(args.box, fg_bg, args.grid, (w, h), args.ratio, args.shorter_side)
        return rle.format_label_map(mask)

    for out, text in zip(_outputs(args), pmap(one, args.logits, args.jobs)):
        emit(out, text)


def _records(path: str) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def cmd_metrics(args, conf):
    m = args.metric
    if m == "iou":
        vals = {"iou": box_iou(args.a, args.b)}
    elif m == "map":
        preds_r, gts_r = _records(args.pred[0]), _records(args.gt[0])
        n = 1 + max([r.get("image", 0) for r in preds_r + gts_r], default=0)
        preds = [[] for _ in range(n)]
        gts = [[] for _ in range(n)]
        for r in preds_r:
            b = grammar.BoundingBox(*r["box"])
            preds[r.get("image", 0)].append(ScoredBox(r["category"], b, float(r.get("score", b.area))))
        for r in gts_r:
            gts[r.get("image", 0)].append((r["category"], grammar.BoundingBox(*r["box"])))
        vals = {"map": map_coco(preds, gts)}
    elif m in ("miou", "ciou"):
        if len(args.pred) != len(args.gt):
            raise VLError("--pred and --gt need the same number of files")
        pairs = pmap(lambda pg: (read_map(pg[0]), read_map(pg[1])), list(zip(args.pred, args.gt)), args.jobs)
        if m == "ciou":
            vals = {"ciou": ciou(pairs)}
        else:
            if args.classes is None:
                raise VLError("miou needs --classes")
            per = pmap(lambda pg: miou(pg[0], pg[1], args.classes, args.ignore), pairs, args.jobs)
            vals = {"miou": float(np.mean(per))}
            if len(per) > 1:
                vals.update({f"miou[{i}]": v for i, v in enumerate(per)})
    elif m == "pckh":
        preds = grammar.loads_lines(Path(args.pred[0]).read_text(), "pose")
        gts = grammar.loads_lines(Path(args.gt[0]).read_text(), "pose")
        if len(preds) != len(gts):
            raise VLError("pred and gt pose files must hold the same number of instances")
        means = [pckh(p, g, args.head_len)[1] for p, g in zip(preds, gts)]
        vals = {"pckh": float(np.mean(means)) if means else 0.0}
    elif m == "delta1":
        vals_list = pmap(lambda pg: delta1(read_depth(pg[0]), read_depth(pg[1])),
                         list(zip(args.pred, args.gt)), args.jobs)
        vals = {"delta1": float(np.mean(vals_list))}
    else:  # pragma: no cover - argparse restricts choices
        raise VLError(m)
    emit(args.out, report(vals, args.format))


def cmd_reward(args, conf):
    vocab = vocab_from(args, conf)
    task = args.task
    if task == "grounding":
        pred = grammar.parse_text(args.pred, "box", vocab)
        gt = grammar.parse_text(args.gt, "box", vocab)
    elif task == "detection":
        pred = grammar.parse_text(args.pred, "detections", vocab)
        gt = grammar.parse_text(args.gt, "detections", vocab)
    elif task == "counting":
        pred = int(args.pred) if args.pred.strip().lstrip("-").isdigit() else args.pred
        gt = int(args.gt) if args.gt.strip().lstrip("-").isdigit() else args.gt
    else:
        pred, gt = args.pred, args.gt
    value = task_reward(task, pred, gt, RewardConfig(grounding_raw_iou=args.raw_iou))
    emit(args.out, report({"reward": value}, args.format) if args.format == "json" else f"{value}\n")


def cmd_rollout_filter(args, conf):
    cfg = FilterConfig(tau_v=args.tau_v, tau_k=args.tau_k)
    kept = []
    for ln in Path(args.input).read_text().splitlines():
        if not ln.strip():
            continue
        r = json.loads(ln)
        g = RolloutGroup(r["rewards"], r.get("ratios", []), r.get("advantages", []))
        if admit(g, cfg):
            kept.append(ln + "\n")
        elif args.verbose:
            print(f"dropped: max={g.rewards.max()} var={np.var(g.rewards)} K={kl_metric(g.ratios)}",
                  file=sys.stderr)
    emit(args.out, "".join(kept))


def cmd_fit_scaling(args, conf):
    rows = [ln.replace(",", " ").split() for ln in Path(args.input).read_text().splitlines()]
    rows = [r for r in rows if r and not r[0].startswith("#")]
    c = [float(r[0]) for r in rows]
    e = [float(r[1]) for r in rows]
    fit = fit_power_law(c, e)
    emit(args.out, report({"alpha": fit.alpha, "log_a": fit.log_a, "r2": fit.r2}, args.format))


def cmd_train_demo(args, conf):
    from .demo import run_demo
    from .model import save_checkpoint

    res = run_demo(steps=args.steps, seed=args.seed, lr=args.lr, mode=args.mode)
    if args.checkpoint:
        atomic_write(args.checkpoint, save_checkpoint(res.state.model))
    vals = {
        "steps": args.steps,
        "initial_loss": res.losses[0],
        "final_loss": res.losses[-1],
        "smoothed_reduction": res.reduction,
    }
    emit(args.out, report(vals, args.format))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _vocab_flags(p):
    g = p.add_argument_group("vocabulary")
    g.add_argument("--text-vocab-size", dest="text_vocab_size", type=int)
    g.add_argument("--image-codebook-size", dest="image_codebook_size", type=int)
    g.add_argument("--coords-per-axis", dest="coords_per_axis", type=int)
    g.add_argument("--depth-bins", dest="depth_bins", type=int)


def _fmt(p):
    p.add_argument("--format", choices=("text", "json"), default="text")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unifiedvl", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key: value config file (default: $YVL_CONFIG)")
    ap.add_argument("--seed", type=int, default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    vocab = sub.add_parser("vocab", help="vocabulary layout").add_subparsers(dest="action", required=True)
    p = vocab.add_parser("build", help="write the versioned layout manifest")
    _vocab_flags(p)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_vocab_build)

    p = sub.add_parser("emit", help="JSON-lines structured values -> token text")
    p.add_argument("kind", choices=grammar.KINDS)
    p.add_argument("input")
    p.add_argument("--lossy", action="store_true", help="clamp coordinates instead of failing")
    p.add_argument("-o", "--out")
    _vocab_flags(p)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("parse", help="token text -> JSON-lines structured values")
    p.add_argument("kind", choices=grammar.KINDS)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--in", dest="input")
    p.add_argument("-o", "--out")
    _vocab_flags(p)
    p.set_defaults(func=cmd_parse)

    r = sub.add_parser("rle", help="run-length codec").add_subparsers(dest="action", required=True)
    p = r.add_parser("encode", help="label map file -> 'H W' + RLE line")
    p.add_argument("input")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_rle_encode)
    p = r.add_parser("decode", help="'H W' + RLE line -> label map file")
    p.add_argument("input")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_rle_decode)

    d = sub.add_parser("depth", help="depth quantization").add_subparsers(dest="action", required=True)
    for name, fn, helptext in (("quantize", cmd_depth_quantize, "depth map -> bin label map"),
                               ("dequantize", cmd_depth_dequantize, "bin label map -> depth map")):
        p = d.add_parser(name, help=helptext)
        p.add_argument("input")
        p.add_argument("--spec", choices=sorted(depthmod.BUILTIN_SPECS))
        p.add_argument("-o", "--out")
        p.set_defaults(func=fn)

    dec = sub.add_parser("decode", help="dense decoding from logits").add_subparsers(dest="action", required=True)
    for name, fn in (("semseg", cmd_decode_semseg), ("depth", cmd_decode_depth), ("refseg", cmd_decode_refseg)):
        p = dec.add_parser(name, help=f"{name} decoding")
        p.add_argument("--logits", nargs="+", required=True, help="VLLT logit files")
        p.add_argument("--grid", type=size, required=True, help="vision token grid HxW")
        p.add_argument("--size", type=size, required=True, help="output size HxW")
        p.add_argument("-o", "--out", nargs="+")
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(func=fn)
        if name == "semseg":
            p.add_argument("--cats", required=True, help="comma-separated category names")
            p.add_argument("--tau", type=float)
            p.add_argument("--background", action="store_true")
            _vocab_flags(p)
        elif name == "depth":
            p.add_argument("--spec", choices=sorted(depthmod.BUILTIN_SPECS))
        else:
            p.add_argument("--box", type=box_arg, required=True, help="x1,y1,x2,y2")
            p.add_argument("--ratio", type=float, default=1.2)
            p.add_argument("--shorter-side", dest="shorter_side", type=int, default=1280)

    p = sub.add_parser("metrics", help="evaluation metrics")
    p.add_argument("metric", choices=("iou", "map", "miou", "ciou", "pckh", "delta1"))
    p.add_argument("--a", type=box_arg)
    p.add_argument("--b", type=box_arg)
    p.add_argument("--pred", nargs="+")
    p.add_argument("--gt", nargs="+")
    p.add_argument("--classes", type=int)
    p.add_argument("--ignore", type=int, default=255)
    p.add_argument("--head-len", dest="head_len", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out")
    _fmt(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("reward", help="task reward for one prediction")
    p.add_argument("task", choices=("grounding", "detection", "counting", "spotting", "parsing"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--raw-iou", dest="raw_iou", action="store_true")
    p.add_argument("-o", "--out")
    _vocab_flags(p)
    _fmt(p)
    p.set_defaults(func=cmd_reward)

    ro = sub.add_parser("rollout", help="rollout groups").add_subparsers(dest="action", required=True)
    p = ro.add_parser("filter", help="keep admissible groups from a JSON-lines file")
    p.add_argument("input")
    p.add_argument("--tau-v", dest="tau_v", type=float, default=0.0)
    p.add_argument("--tau-k", dest="tau_k", type=float, default=float("inf"))
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_rollout_filter)

    p = sub.add_parser("fit-scaling", help="fit error = a * compute^-alpha")
    p.add_argument("input", help="two columns: compute error")
    p.add_argument("-o", "--out")
    _fmt(p)
    p.set_defaults(func=cmd_fit_scaling)

    t = sub.add_parser("train", help="toy model training").add_subparsers(dest="action", required=True)
    p = t.add_parser("demo", help="train on the synthetic mixed sequence")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--mode", choices=("vluas", "ntp_m", "combined"), default="combined")
    p.add_argument("--checkpoint")
    p.add_argument("-o", "--out")
    _fmt(p)
    p.set_defaults(func=cmd_train_demo)
    return ap


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        conf = read_config(args.config)
        args.func(args, conf)
    except (VLError, OSError, ValueError, KeyError) as exc:
        print(f"unifiedvl: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:  # pragma: no cover - console entry
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
