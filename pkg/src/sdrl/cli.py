"""Command-line entry points.

Exit codes: 0 on success, 1 when a check or invariant fails, 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import eventflow as ef
from . import policy as pol
from .config import ConfigError, RunConfig, from_dict, load_config, parse_override
from .env import ScriptedOracle, Vocabulary, build_episodes, evaluate, load_dataset
from .gradcheck import grad_check, sign_flip
from .train import inspect_group, make_provider, run_training

ORACLE_FORMAT = "sdrl-scripted-oracle"


class BadInput(Exception):
    """Unreadable or invalid user input (exit code 2)."""


class CheckFailed(Exception):
    """A verification or invariant failure (exit code 1)."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _read_json(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise BadInput(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(raw)
    except UnicodeDecodeError as exc:
        raise BadInput(f"{path} is not UTF-8 text (byte {exc.start})") from None
    except json.JSONDecodeError as exc:
        # pos counts characters; report the byte offset
        off = len(raw.decode("utf-8")[:exc.pos].encode("utf-8"))
        raise BadInput(f"invalid JSON in {path} at byte {off} "
                       f"(line {exc.lineno}, column {exc.colno}): {exc.msg}") from None


def _config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        doc = _read_json(args.config)
        if not isinstance(doc, dict):
            raise BadInput("config file must hold a JSON object")
    for item in getattr(args, "set", None) or []:
        k, v = parse_override(item)
        doc[k] = v
    return from_dict(doc)


def _write(path, text: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _load_data(data_dir):
    for name in ("annotations.json", "dataset.jsonl", "manifest.json"):
        if not os.path.isfile(os.path.join(data_dir, name)):
            raise BadInput(f"{data_dir}: missing {name}")
    for name in ("annotations.json", "manifest.json"):
        _read_json(os.path.join(data_dir, name))
    try:
        return load_dataset(data_dir)
    except (ValueError, KeyError, TypeError) as exc:
        raise BadInput(f"{data_dir}: {exc}") from None


def _episodes(videos, lines, manifest, vocab, split: str, cfg: RunConfig):
    ids = None if split == "all" else manifest[split]
    return build_episodes(videos, lines, vocab, ids, cfg.obs_swap)


# ------------------------------------------------------------------ gen-data

def _parse_counts(items, total):
    if not items:
        return ef.mix_counts(total)
    counts = {}
    for item in items:
        if "=" not in item:
            raise BadInput(f"--counts entry {item!r} is not FAMILY=N")
        k, v = item.rsplit("=", 1)
        if k not in ef.FAMILIES:
            raise BadInput(f"unknown family {k!r}")
        try:
            counts[k] = int(v)
        except ValueError:
            raise BadInput(f"count for {k!r} is not an integer") from None
        if counts[k] < 0:
            raise BadInput(f"count for {k!r} is negative")
    return counts


def cmd_gen_data(args) -> int:
    raw = _read_json(args.annotations)
    try:
        videos = ef.parse_annotations(raw)
    except (ValueError, KeyError, TypeError) as exc:
        raise BadInput(f"{args.annotations}: {exc}") from None
    counts = _parse_counts(args.counts, args.total)
    lines, manifest = ef.generate_dataset(videos, counts, args.seed, args.clip_len, args.val_fraction)
    by_id = {v.video_id: v for v in videos}
    bad = []
    for ln in lines:
        ef.validate_record(ln["record"])
        if ef.record_ground_truth(ln["record"], by_id[ln["video_id"]]) != ln["record"]["answer_text"]:
            bad.append(ln["id"])
    if bad:
        raise CheckFailed(f"{len(bad)} records disagree with the ground-truth oracle: {bad[:5]}")
    manifest["seed"] = args.seed
    manifest["clip_len"] = args.clip_len
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "annotations.json"), json.dumps(ef.dump_annotations(videos), indent=2) + "\n")
    _write(os.path.join(args.out, "dataset.jsonl"), "".join(json.dumps(ln, sort_keys=True) + "\n" for ln in lines))
    _write(os.path.join(args.out, "manifest.json"), _dumps(manifest) + "\n")
    print(_dumps({"records": len(lines), "train": len(manifest["train"]), "val": len(manifest["val"]),
                  "level_fractions": manifest["level_fractions"]}))
    return 0


def cmd_toy_annotations(args) -> int:
    videos = ef.make_toy_annotations(args.videos, args.actions, args.labels, args.seed, args.overlap)
    _write(args.out, json.dumps(ef.dump_annotations(videos), indent=2) + "\n")
    return 0


# ------------------------------------------------------------------ train / eval

def cmd_train(args) -> int:
    cfg = _config(args)
    videos, lines, manifest = _load_data(args.data)
    vocab = Vocabulary.from_dataset(videos, lines)
    train_eps = _episodes(videos, lines, manifest, vocab, "train", cfg)
    val_eps = _episodes(videos, lines, manifest, vocab, "val", cfg)
    if not train_eps:
        raise BadInput(f"{args.data}: the train split is empty")
    try:
        _, evals = run_training(cfg, vocab, train_eps, val_eps, args.out, verbose=args.verbose,
                                meta={"data_dir": os.path.abspath(args.data)})
    except RuntimeError as exc:
        raise BadInput(str(exc)) from None
    print(_dumps({"out": args.out, "steps": cfg.steps, "final_eval": evals[-1] if evals else None}))
    return 0


def _load_policy(path):
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise BadInput(f"{path} is not a checkpoint")
    if doc.get("format") == ORACLE_FORMAT:
        return None, doc
    try:
        params, extra = pol.load_checkpoint(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise BadInput(f"{path}: {exc}") from None
    return params, extra


def cmd_eval(args) -> int:
    params, extra = _load_policy(args.checkpoint)
    cfg = from_dict(extra.get("config", {}))
    data = args.data or extra.get("data_dir")
    if not data:
        raise BadInput("no --data given and the checkpoint records no dataset")
    videos, lines, manifest = _load_data(data)
    vocab = Vocabulary.from_json(extra["vocab"]) if "vocab" in extra else Vocabulary.from_dataset(videos, lines)
    eps = _episodes(videos, lines, manifest, vocab, args.split, cfg)
    if not eps:
        raise BadInput(f"split {args.split!r} is empty")
    if params is not None and params.cfg.vocab_size != vocab.size:
        raise BadInput("checkpoint vocabulary does not match its parameters")
    policy = ScriptedOracle(vocab) if params is None else params
    report = evaluate(policy, eps, vocab, cfg.max_len, make_provider(cfg), cfg.bleu_max_n)
    text = _dumps(report) + "\n"
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------ grad-check

def cmd_grad_check(args) -> int:
    kls = sorted({0.0, 0.04} | ({_config(args).kl_coeff} if args.config or args.set else set()))
    rep = grad_check(args.seed, tuple(kls), grad_fn=sign_flip() if args.inject_sign_flip else None)
    print(_dumps(rep.to_dict()))
    if not rep.passed:
        w = rep.worst
        raise CheckFailed(f"gradient check failed: worst relative error {w['rel_err']:.3g} "
                          f"in {w['layer']}{w['index']} (kl_coeff={w['kl_coeff']})")
    return 0


# ------------------------------------------------------------------ inspect-weights

def dump_violations(dump: dict, tol: float = 1e-12) -> list[str]:
    """Weight-invariant violations in an ``inspect_group`` dump."""
    out = []
    lam, lp, acc = dump["lam"], dump["lam_prime"], dump["accuracy"]
    if dump["omega_s"] is not None:
        w = np.asarray(dump["omega_s"])
        if (w < 1 - lam - tol).any() or (w > 1 + tol).any():
            out.append("omega_s outside [1 - lam, 1]")
    for i, m in enumerate(dump["members"]):
        if not m["parse_ok"]:
            continue
        s, e = m["spans"]["summary"]
        W = np.asarray(m["W"])
        if (W[s:e] < 1 - lam - tol).any() or (W[s:e] > 1 + tol).any():
            out.append(f"member {i}: summary weights outside [1 - lam, 1]")
        if "omega_d_dyn" in m:
            d = np.asarray(m["omega_d_dyn"])
            lo, hi = 1 - acc, (1 - acc) * (1 + lp)
            if (d < lo - tol).any() or (d > hi + tol).any():
                out.append(f"member {i}: dynamic diversity weights outside [{lo:g}, {hi:g}]")
            if acc == 1 and (W[m["reasoning_positions"]] != 0).any():
                out.append(f"member {i}: solved group with nonzero reasoning weights")
    return out


def cmd_inspect_weights(args) -> int:
    params, extra = _load_policy(args.checkpoint)
    if params is None:
        raise BadInput("inspect-weights needs a trained policy checkpoint")
    cfg = from_dict(extra.get("config", {}))
    data = args.data or extra.get("data_dir")
    if not data:
        raise BadInput("no --data given and the checkpoint records no dataset")
    videos, lines, manifest = _load_data(data)
    vocab = Vocabulary.from_json(extra["vocab"])
    match = [ln for ln in lines if ln["id"] == args.episode]
    if not match:
        raise BadInput(f"episode {args.episode!r} not found in {data}")
    ep = build_episodes(videos, match, vocab, None, cfg.obs_swap)[0]
    dump = inspect_group(params, ep, cfg, vocab, args.seed)
    bad = dump_violations(dump)
    text = _dumps(dump) + "\n"
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    if bad:
        raise CheckFailed("; ".join(bad))
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdrl", description="Summary-driven RL on symbolic temporal QA.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a temporal QA dataset from annotations")
    g.add_argument("--annotations", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--counts", nargs="*", metavar="FAMILY=N",
                   help="records per family; default follows the published family mix")
    g.add_argument("--total", type=int, default=600, help="total records when --counts is omitted")
    g.add_argument("--clip-len", type=int, default=None, help="actions per context clip")
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("toy-annotations", help="write random symbolic annotations")
    t.add_argument("--out", required=True)
    t.add_argument("--videos", type=int, default=30)
    t.add_argument("--actions", type=int, default=8)
    t.add_argument("--labels", type=int, default=16)
    t.add_argument("--overlap", type=float, default=0.0)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_toy_annotations)

    tr = sub.add_parser("train", help="train a policy")
    tr.add_argument("--config")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="override config values")
    tr.add_argument("--verbose", action="store_true")
    tr.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", choices=("train", "val", "all"), default="val")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    gc = sub.add_parser("grad-check", help="finite-difference check of the objective gradient")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--config")
    gc.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    gc.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(fn=cmd_grad_check)

    iw = sub.add_parser("inspect-weights", help="dump token weights for one sampled group")
    iw.add_argument("--checkpoint", required=True)
    iw.add_argument("--episode", required=True)
    iw.add_argument("--data")
    iw.add_argument("--seed", type=int, default=0)
    iw.add_argument("--out")
    iw.set_defaults(fn=cmd_inspect_weights)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return args.fn(args)
    except (BadInput, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
