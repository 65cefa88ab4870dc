"""Command-line entry point: data generation, training, evaluation, prediction,
ablation sweeps, and gradient checking.

Config precedence: built-in defaults < config file (flat `key = value` lines,
dotted keys like train.lr) < --set overrides < explicit flags. Every command
given --out writes the resolved configuration snapshot there, so runs are
self-describing.

Exit codes: 0 success, 1 validation/parse error, 2 I/O error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import random
import sys
from pathlib import Path

from .autodiff import grad_check
from .corpus import Corpus, SynthConfig, generate_synthetic, load_corpus, save_corpus
from .encoder import ModelConfig
from .errors import ContractViolation, NumericalError, ParseError, ValidationError
from .model import forward_absa, forward_aux, init_model_params, param_tensors
from .predict import evaluate, predict_sentence
from .text import build_vocab, encode_absa, pad_batch
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_loop
from .auxgen import dump_aux_instances, make_prd, make_tsmtd

_SPACES = {"model": ModelConfig, "train": TrainConfig, "synth": SynthConfig}


def _field_types() -> dict[str, type]:
    out = {}
    for space, cls in _SPACES.items():
        for f in dataclasses.fields(cls):
            out[f"{space}.{f.name}"] = f.type if isinstance(f.type, type) else type(getattr(cls(), f.name))
    return out


_FIELD_TYPES = _field_types()


def _convert(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    target = _FIELD_TYPES[key]
    raw = raw.strip()
    if target is bool:
        low = raw.lower()
        if low in ("true", "1"):
            return True
        if low in ("false", "0"):
            return False
        raise ValidationError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return target(raw)
    except ValueError as e:
        raise ValidationError(f"config key {key}: {e}") from e


def _parse_config_file(path: Path) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = _convert(key.strip(), raw)
    return values


def resolve_configs(config_path: str | None, sets: list[str] | None,
                    flag_values: dict[str, object] | None = None
                    ) -> tuple[ModelConfig, TrainConfig, SynthConfig, dict[str, object]]:
    """Merge defaults, config file, --set overrides, and explicit flag values."""
    merged: dict[str, object] = {}
    if config_path:
        merged.update(_parse_config_file(Path(config_path)))
    for item in sets or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        merged[key.strip()] = _convert(key.strip(), raw)
    for key, value in (flag_values or {}).items():
        if value is not None:
            merged[key] = value

    def build(space: str, cls):
        kwargs = {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith(space + ".")}
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ValidationError(str(e)) from e

    model_cfg = build("model", ModelConfig)
    train_cfg = build("train", TrainConfig)
    synth_cfg = build("synth", SynthConfig)
    model_cfg.validate()
    train_cfg.validate()
    synth_cfg.validate()
    return model_cfg, train_cfg, synth_cfg, merged


def _write_snapshot(out_dir: Path, model_cfg: ModelConfig, train_cfg: TrainConfig,
                    synth_cfg: SynthConfig) -> None:
    lines = []
    for space, cfg in (("model", model_cfg), ("train", train_cfg), ("synth", synth_cfg)):
        for f in dataclasses.fields(cfg):
            lines.append(f"{space}.{f.name} = {getattr(cfg, f.name)}")
    (out_dir / "config.resolved.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _ensure_out(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    flag_values = {
        "synth.n_sentences": args.n,
        "synth.seed": args.seed,
        "synth.contrastive_fraction": args.contrastive,
        "synth.max_aspects_per_sentence": args.max_aspects,
    }
    model_cfg, train_cfg, synth_cfg, _ = resolve_configs(args.config, args.set, flag_values)
    out = _ensure_out(args)
    if out is None:
        raise ValidationError("gen-data requires --out")
    _write_snapshot(out, model_cfg, train_cfg, synth_cfg)

    corpus = generate_synthetic(synth_cfg)
    order = list(range(len(corpus)))
    random.Random(f"{synth_cfg.seed}:split").shuffle(order)
    n_dev = n_test = len(order) // 10
    test_idx = order[:n_test]
    dev_idx = order[n_test:n_test + n_dev]
    train_idx = order[n_test + n_dev:]
    splits = {"train": train_idx, "dev": dev_idx, "test": test_idx}
    counts = {}
    for split, idx in splits.items():
        sub = Corpus(tuple(corpus.sentences[i] for i in sorted(idx)),
                     name=f"{corpus.name}-{split}", split=split)
        save_corpus(sub, out / f"{split}.jsonl")
        counts[split] = len(sub)

    synth_dict = dataclasses.asdict(synth_cfg)
    canonical = json.dumps(synth_dict, sort_keys=True)
    manifest = {
        "generator": synth_dict,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "counts": counts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    if args.dump_aux:
        vocab = build_vocab(corpus, min_freq=train_cfg.min_freq)
        rng = random.Random(f"{synth_cfg.seed}:dump-aux")
        instances = []
        for s in corpus.sentences[: args.dump_aux]:
            for maker in (make_tsmtd, make_prd):
                inst = maker(s, vocab, rng)
                if inst is not None:
                    instances.append(inst)
        dump_aux_instances(instances, out / "aux_sample.jsonl")

    print(f"wrote {counts} to {out}")
    return 0


def _train_flag_values(args) -> dict[str, object]:
    values = {
        "train.alpha": args.alpha,
        "train.epochs": args.epochs,
        "train.seed": args.seed,
        "train.batch_size": args.batch_size,
        "train.lr": args.lr,
    }
    if args.no_ap:
        values["train.enable_ap"] = False
    if args.no_op:
        values["train.enable_op"] = False
    if args.no_tsmtd:
        values["train.enable_tsmtd"] = False
    if args.no_prd:
        values["train.enable_prd"] = False
    return values


def cmd_train(args) -> int:
    model_cfg, train_cfg, synth_cfg, _ = resolve_configs(args.config, args.set,
                                                         _train_flag_values(args))
    out = _ensure_out(args)
    if out is None:
        raise ValidationError("train requires --out")
    data = Path(args.data)
    train_corpus = load_corpus(data / "train.jsonl", split="train")
    dev_corpus = load_corpus(data / "dev.jsonl", split="dev")
    vocab = build_vocab(train_corpus, min_freq=train_cfg.min_freq)
    model_cfg = dataclasses.replace(model_cfg, vocab_size=len(vocab))
    _write_snapshot(out, model_cfg, train_cfg, synth_cfg)

    result = train_loop(train_corpus, dev_corpus, vocab, model_cfg, train_cfg,
                        log_path=out / "train_log.jsonl")
    save_checkpoint(result.checkpoint, out / "model.ckpt")
    vocab.save(out / "vocab.txt")
    print(f"best dev absa_f1 {result.best_dev_absa_f1:.4f} at epoch {result.best_epoch}; "
          f"checkpoint and log in {out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.data, split=args.split)
    report = evaluate(ckpt.params, ckpt.model_cfg, ckpt.vocab, corpus,
                      enable_ap=ckpt.train_cfg.enable_ap,
                      enable_op=ckpt.train_cfg.enable_op)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.report:
        Path(args.report).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return 0


def _iter_prediction_inputs(path: Path):
    for line in path.read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and "tokens" in obj:
            yield [str(t) for t in obj["tokens"]]
        else:
            yield line.split()


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    lines = []
    for tokens in _iter_prediction_inputs(Path(args.input)):
        pred = predict_sentence(tokens, ckpt)
        lines.append(json.dumps(pred.to_json(), ensure_ascii=False))
    payload = "\n".join(lines) + ("\n" if lines else "")
    if args.output:
        Path(args.output).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


ABLATION_ROWS: list[tuple[str, dict]] = [
    ("full", {}),
    ("w/o AP", {"enable_ap": False}),
    ("w/o OP", {"enable_op": False}),
    ("w/o AP & OP", {"enable_ap": False, "enable_op": False}),
    ("w/o TSMTD", {"enable_tsmtd": False}),
    ("w/o PRD", {"enable_prd": False}),
    ("w/o TSMTD & PRD", {"enable_tsmtd": False, "enable_prd": False}),
    ("w/o AP & OP & TSMTD & PRD",
     {"enable_ap": False, "enable_op": False, "enable_tsmtd": False, "enable_prd": False}),
]


def run_ablation(train_corpus, dev_corpus, test_corpus, model_cfg: ModelConfig,
                 base_cfg: TrainConfig, seeds: int) -> list[dict]:
    """Train and test-evaluate the eight ablation configurations across seeds."""
    vocab = build_vocab(train_corpus, min_freq=base_cfg.min_freq)
    model_cfg = dataclasses.replace(model_cfg, vocab_size=len(vocab))
    rows = []
    for label, toggles in ABLATION_ROWS:
        per_seed = []
        for k in range(seeds):
            cfg = dataclasses.replace(base_cfg, seed=base_cfg.seed + k, **toggles)
            result = train_loop(train_corpus, dev_corpus, vocab, model_cfg, cfg)
            report = evaluate(result.checkpoint.params, model_cfg, vocab, test_corpus,
                              enable_ap=cfg.enable_ap, enable_op=cfg.enable_op)
            per_seed.append(report.absa_f1)
        rows.append({"label": label, "mean_absa_f1": sum(per_seed) / len(per_seed),
                     "per_seed": per_seed})
    return rows


def _ablation_table(rows: list[dict]) -> str:
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'configuration'.ljust(width)}  mean ABSA-F1"]
    for r in rows:
        lines.append(f"{r['label'].ljust(width)}  {r['mean_absa_f1']:.4f}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    model_cfg, train_cfg, synth_cfg, _ = resolve_configs(args.config, args.set,
                                                         _train_flag_values(args))
    out = _ensure_out(args)
    if out is None:
        raise ValidationError("ablate requires --out")
    data = Path(args.data)
    train_corpus = load_corpus(data / "train.jsonl", split="train")
    dev_corpus = load_corpus(data / "dev.jsonl", split="dev")
    test_corpus = load_corpus(data / "test.jsonl", split="test")
    _write_snapshot(out, model_cfg, train_cfg, synth_cfg)

    rows = run_ablation(train_corpus, dev_corpus, test_corpus, model_cfg, train_cfg,
                        seeds=args.seeds)
    (out / "ablation.json").write_text(json.dumps({"rows": rows}, indent=2) + "\n",
                                       encoding="utf-8")
    table = _ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def build_gradcheck_loss(seed: int = 0):
    """Tiny joint-loss closure for gradient checking: d_h=8, one encoder layer,
    one decoder block, a 2-sentence batch with both auxiliary kinds."""
    synth = SynthConfig(n_sentences=2, max_aspects_per_sentence=2, contrastive_fraction=0.5,
                        seed=seed)
    corpus = generate_synthetic(synth)
    vocab = build_vocab(corpus)
    model_cfg = ModelConfig(d_h=8, n_enc_layers=1, n_dec_layers=1, n_heads=2, ffn_dim=16,
                            max_len=32, dropout=0.0, vocab_size=len(vocab))
    params = init_model_params(model_cfg, seed)
    batch_absa = pad_batch([encode_absa(s, vocab) for s in corpus.sentences], vocab)
    rng = random.Random(f"{seed}:gradcheck-aux")
    tsmtd = [make_tsmtd(s, vocab, rng).encoded for s in corpus.sentences]
    prd = [inst.encoded for inst in (make_prd(s, vocab, rng) for s in corpus.sentences)
           if inst is not None]
    batch_tsmtd = pad_batch(tsmtd, vocab)
    batch_prd = pad_batch(prd, vocab) if prd else None

    def loss():
        fwd = forward_absa(params, batch_absa, model_cfg, mode="eval")
        total = fwd.l_ate + fwd.l_ote + fwd.l_asc
        total = total + forward_aux(params, batch_tsmtd, model_cfg, mode="eval")
        if batch_prd is not None:
            total = total + forward_aux(params, batch_prd, model_cfg, mode="eval")
        return total

    return loss, param_tensors(params)


def cmd_gradcheck(args) -> int:
    loss, tensors = build_gradcheck_loss(seed=args.seed)
    report = grad_check(loss, tensors, step=args.step, tol=args.tol, seed=args.seed)
    print(report)
    return 0 if report.passed else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(p) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")


def _add_train_flags(p) -> None:
    p.add_argument("--alpha", type=float, default=None, help="auxiliary loss weight")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--no-ap", action="store_true", help="disable aspect propagation")
    p.add_argument("--no-op", action="store_true", help="disable opinion propagation")
    p.add_argument("--no-tsmtd", action="store_true", help="disable the masked-term task")
    p.add_argument("--no-prd", action="store_true", help="disable the pair-relation task")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="absanet")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic train/dev/test splits")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="number of sentences")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--contrastive", type=float, default=None)
    p.add_argument("--max-aspects", type=int, default=None, dest="max_aspects")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-aux", type=int, default=0,
                   help="also dump auxiliary instances for the first N sentences")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="directory with train.jsonl and dev.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus JSONL file")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="emit per-sentence predictions as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="JSONL with a 'tokens' field, or whitespace-tokenized text lines")
    p.add_argument("--output", help="write JSONL here instead of stdout")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train/evaluate the eight ablation configurations")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="directory with train/dev/test JSONL")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full joint loss")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
