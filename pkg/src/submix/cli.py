"""Command-line entry point.

Subcommands: train, predict, eval, sweep, attack, convert. Every run reads
an optional flat key=value config file, lets flags override it, and writes
the fully resolved configuration next to its outputs so any run can be
reproduced byte-for-byte from that file. The only environment override is
SUBMIX_OUT_DIR (output directory).

Exit codes: 0 success, 1 runtime error, 2 configuration/capacity error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from submix import accounting, corpus, experiments, lm
from submix.errors import (
    CapacityError,
    ConfigError,
    ParameterError,
    SubmixError,
)
from submix.protocol import (
    PrivacyLedger,
    Session,
    SubMixEnsemble,
    train_ensemble,
)

MANIFEST_NAME = "manifest.json"
RESOLVED_NAME = "config.resolved"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _parse_float(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_COERCE = {int: int, float: _parse_float, str: str, bool: _parse_bool}


def resolve_options(args: argparse.Namespace, schema: dict[str, tuple[type, object]]) -> dict:
    """Merge (flag > config file > default) into a plain dict."""
    file_cfg = parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_cfg) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, (typ, default) in schema.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            resolved[key] = _COERCE[typ](file_cfg[key])
        else:
            resolved[key] = default
    return resolved


def format_resolved(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if value is None:
            continue  # unset optionals stay unset when the file is replayed
        if isinstance(value, float) and math.isinf(value):
            value = "inf"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def prepare_out_dir(cfg: dict) -> Path:
    out = os.environ.get("SUBMIX_OUT_DIR") or cfg.get("out")
    if not out:
        raise ConfigError("no output directory: set --out or SUBMIX_OUT_DIR")
    cfg["out"] = str(out)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_NAME).write_text(format_resolved(cfg), encoding="utf-8")
    return out


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")


# ---------------------------------------------------------------------------
# ensemble persistence
# ---------------------------------------------------------------------------


def save_ensemble_dir(out: Path, ensemble: SubMixEnsemble, vocab: corpus.Vocab, params: dict) -> None:
    vocab.save(out / "vocab.json")
    lm.save_model(ensemble.public, out / "public.json")
    model_files = ["public.json"]
    for i, (h_a, h_b) in enumerate(ensemble.pairs):
        for tag, model in (("a", h_a), ("b", h_b)):
            name = f"part{i:02d}_{tag}.json"
            lm.save_model(model, out / name)
            model_files.append(name)
    manifest = {
        "format": "submix-ensemble",
        "version": 1,
        "k": ensemble.k,
        "vocab_file": "vocab.json",
        "model_files": model_files,
        "partition": ensemble.partition.to_manifest() if ensemble.partition else None,
        "params": params,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")


def load_ensemble_dir(path: str | Path) -> tuple[SubMixEnsemble, corpus.Vocab, dict]:
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: not an ensemble directory (no {MANIFEST_NAME})") from exc
    if manifest.get("format") != "submix-ensemble":
        raise ConfigError(f"{path}: unrecognized manifest format")
    params = manifest["params"]
    vocab = corpus.Vocab.load(root / manifest["vocab_file"], params["mode"])
    public = lm.load_model(root / "public.json")
    pairs = []
    for i in range(manifest["k"]):
        h_a = lm.load_model(root / f"part{i:02d}_a.json")
        h_b = lm.load_model(root / f"part{i:02d}_b.json")
        pairs.append((h_a, h_b))
    partition = (
        corpus.Partition.from_manifest(manifest["partition"]) if manifest["partition"] else None
    )
    return SubMixEnsemble(pairs, public, partition), vocab, params


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

TRAIN_SCHEMA = {
    "corpus": (str, None),
    "public_corpus": (str, None),
    "mode": (str, "character"),
    "k": (int, 4),
    "order": (int, 3),
    "k_add": (float, 0.1),
    "weight": (float, 10.0),
    "seed": (int, 0),
    "out": (str, None),
}


def cmd_train(args) -> int:
    cfg = resolve_options(args, TRAIN_SCHEMA)
    _require(cfg, "corpus")
    out = prepare_out_dir(cfg)
    texts = corpus.iter_texts(cfg["corpus"])
    public_texts = corpus.iter_texts(cfg["public_corpus"]) if cfg["public_corpus"] else []
    vocab = corpus.build_vocab(texts + public_texts, cfg["mode"])
    users = corpus.load_users(cfg["corpus"], vocab)
    public_docs = [corpus.tokenize(t, vocab) for t in public_texts]
    public = lm.pretrain(public_docs, cfg["order"], vocab.size, cfg["k_add"])
    ensemble = train_ensemble(public, users, cfg["k"], cfg["seed"], cfg["weight"])
    save_ensemble_dir(out, ensemble, vocab, cfg)
    print(f"trained k={ensemble.k} ensemble over {len(users)} users -> {out}")
    return 0


PREDICT_SCHEMA = {
    "ensemble": (str, None),
    "input": (str, "-"),
    "epsilon": (float, 1.0),
    "alpha": (float, 2.0),
    "beta": (float, None),
    "budget": (int, None),
    "tau": (float, 1.0),
    "lambda_mode": (str, "symmetric"),
    "seed": (int, 0),
    "halt_on_stop": (bool, False),
    "out": (str, None),
}


def cmd_predict(args) -> int:
    cfg = resolve_options(args, PREDICT_SCHEMA)
    _require(cfg, "ensemble")
    out = prepare_out_dir(cfg)
    ensemble, vocab, _ = load_ensemble_dir(cfg["ensemble"])
    ledger = PrivacyLedger(ensemble.k, cfg["alpha"], cfg["epsilon"], cfg["beta"], cfg["budget"])
    rng = np.random.default_rng(cfg["seed"])
    session = Session(ensemble, ledger, rng, cfg["tau"], cfg["lambda_mode"])
    lines = (
        sys.stdin.read().splitlines()
        if cfg["input"] == "-"
        else Path(cfg["input"]).read_text(encoding="utf-8").splitlines()
    )
    errors = []
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            errors.append({"line": line_no, "error": "empty context"})
            continue
        outcome = session.step(corpus.tokenize(line, vocab))
        print(vocab.token(outcome.token))
        if outcome.stop_issued and cfg["halt_on_stop"]:
            break
    session.transcript.write_jsonl(out / "transcript.jsonl")
    if errors:
        (out / "input_errors.json").write_text(json.dumps(errors, sort_keys=True), encoding="utf-8")
    return 0


EVAL_SCHEMA = {
    "ensemble": (str, None),
    "heldout": (str, None),
    "epsilon": (float, 1.0),
    "alpha": (float, 2.0),
    "beta": (float, None),
    "budget": (int, None),
    "tau": (float, 1.0),
    "lambda_mode": (str, "symmetric"),
    "window": (int, 32),
    "seed": (int, 0),
    "out": (str, None),
}


def cmd_eval(args) -> int:
    cfg = resolve_options(args, EVAL_SCHEMA)
    _require(cfg, "ensemble", "heldout")
    out = prepare_out_dir(cfg)
    ensemble, vocab, _ = load_ensemble_dir(cfg["ensemble"])
    heldout = [
        corpus.tokenize(line, vocab)
        for line in Path(cfg["heldout"]).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    budget = cfg["budget"] or sum(len(s) for s in heldout)
    ledger = PrivacyLedger(ensemble.k, cfg["alpha"], cfg["epsilon"], cfg["beta"], budget)
    rng = np.random.default_rng(cfg["seed"])
    session = Session(ensemble, ledger, rng, cfg["tau"], cfg["lambda_mode"])
    report = experiments.perplexity(
        session, heldout, cfg["window"], "submix", cfg["epsilon"], cfg["alpha"], budget
    )
    payload = {
        "mechanism": report.mechanism,
        "epsilon": "inf" if math.isinf(cfg["epsilon"]) else cfg["epsilon"],
        "alpha": report.alpha,
        "B": report.query_budget,
        "mean_perplexity": report.mean_perplexity,
        "per_sample": report.per_sample,
        "tokens": report.tokens_evaluated,
        "stop_index": session.transcript.stop_index,
    }
    (out / "perplexity.json").write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
    print(f"perplexity {report.mean_perplexity:.6g} over {report.tokens_evaluated} tokens")
    return 0


SWEEP_SCHEMA = {
    "epsilons": (str, "0.25,1,4,16,inf"),
    "seeds": (int, 3),
    "k": (int, 4),
    "alpha": (float, 2.0),
    "n_users": (int, 16),
    "order": (int, 3),
    "window": (int, 32),
    "heldout_samples": (int, 4),
    "heldout_len": (int, 32),
    "include_public": (bool, True),
    "out": (str, None),
}


def cmd_sweep(args) -> int:
    cfg = resolve_options(args, SWEEP_SCHEMA)
    out = prepare_out_dir(cfg)
    design = experiments.pattern_corpus_design(
        n_users=cfg["n_users"],
        k_parts=cfg["k"],
        order=cfg["order"],
        window=cfg["window"],
        heldout_samples=cfg["heldout_samples"],
        heldout_len=cfg["heldout_len"],
    )
    epsilons = [_parse_float(tok) for tok in cfg["epsilons"].split(",") if tok.strip()]
    points = []
    for seed in range(cfg["seeds"]):
        if cfg["include_public"]:
            points.append(experiments.SweepPoint("public", seed=seed, alpha=cfg["alpha"]))
        for eps in epsilons:
            points.append(
                experiments.SweepPoint("submix", epsilon=eps, alpha=cfg["alpha"], seed=seed)
            )
    rows = experiments.run_sweep(design, points)
    experiments.write_sweep_csv(rows, out / "sweep.csv")
    experiments.write_sweep_json(rows, out / "sweep.json")
    print(f"{len(rows)} sweep rows -> {out}")
    return 0


ATTACK_SCHEMA = {
    "m": (int, 6),
    "ell": (int, 3),
    "k": (int, 3),
    "epsilon": (float, 1.0),
    "alpha": (float, 2.0),
    "beta": (float, None),
    "generations": (int, 100),
    "seeds": (int, 1),
    "seed": (int, 0),
    "tau": (float, 1.0),
    "weight": (float, 1000.0),
    "public_only": (bool, False),
    "out": (str, None),
}


def cmd_attack(args) -> int:
    cfg = resolve_options(args, ATTACK_SCHEMA)
    out = prepare_out_dir(cfg)
    reports = []
    for s in range(cfg["seeds"]):
        report = experiments.run_code_attack(
            cfg["m"], cfg["ell"], cfg["k"], cfg["epsilon"], cfg["alpha"],
            cfg["generations"], cfg["seed"] + s, cfg["tau"], cfg["beta"],
            cfg["weight"], public_only=cfg["public_only"],
        )
        reports.append(report.to_json())
    mean_hit = float(np.mean([r["hit_rate"] for r in reports]))
    payload = {"mean_hit_rate": mean_hit, "runs": reports}
    (out / "attack.json").write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
    print(f"mean hit rate {mean_hit:.4f} over {cfg['seeds']} seed(s)")
    return 0


def cmd_convert(args) -> int:
    def base_claim(default_notion: str) -> accounting.PrivacyClaim:
        if args.claim_in:
            data = json.loads(Path(args.claim_in).read_text(encoding="utf-8"))
            return accounting.PrivacyClaim.from_json(data)
        if args.eps is None:
            raise ConfigError("provide --eps or --claim-in")
        return accounting.initial_claim(default_notion, args.eps, args.alpha)

    claim = None
    if args.rs:
        claim = accounting.convert_claim(base_claim("rop"), "random_stopping", B=args.B, C=args.C)
        print(f"{claim.epsilon:.5f}")
    elif args.fano:
        if args.eps is None:
            raise ConfigError("--fano needs --eps")
        value = accounting.fano_extractability_bound(args.kappa, args.eps, args.m)
        print(f"{value:.5f}")
    elif args.rdp_to_dp:
        claim = accounting.convert_claim(base_claim("partition-rdp"), "rdp_to_dp", delta=args.delta)
        print(f"{claim.epsilon:.5f}")
    elif args.partition_to_user:
        claim = accounting.convert_claim(base_claim("partition-rdp"), "partition_to_user")
        print(f"alpha={claim.alpha:.5f} epsilon={claim.epsilon:.5f}")
    elif args.user_to_partition:
        claim = accounting.convert_claim(base_claim("user-rdp"), "user_to_partition",
                                         n_users=args.n, k_parts=args.k)
        print(f"alpha={claim.alpha:.5f} epsilon={claim.epsilon:.5f}")
    elif args.group:
        claim = accounting.convert_claim(base_claim("user-rdp"), "group", kappa=args.kappa)
        print(f"{claim.epsilon:.5f}")
    else:
        raise ConfigError("choose one of --rs, --fano, --rdp-to-dp, "
                          "--partition-to-user, --user-to-partition, --group")
    if claim is not None:
        payload = json.dumps(claim.to_json(), sort_keys=True, indent=2)
        print(payload)
        if args.claim_out:
            Path(args.claim_out).write_text(payload + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_schema_flags(parser: argparse.ArgumentParser, schema: dict) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for key, (typ, _default) in schema.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, dest=key, action="store_const", const=True, default=None)
        else:
            parser.add_argument(flag, dest=key, type=_COERCE[typ], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="submix")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, schema, fn in (
        ("train", TRAIN_SCHEMA, cmd_train),
        ("predict", PREDICT_SCHEMA, cmd_predict),
        ("eval", EVAL_SCHEMA, cmd_eval),
        ("sweep", SWEEP_SCHEMA, cmd_sweep),
        ("attack", ATTACK_SCHEMA, cmd_attack),
    ):
        p = sub.add_parser(name)
        _add_schema_flags(p, schema)
        p.set_defaults(fn=fn)

    p = sub.add_parser("convert")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--rs", action="store_true")
    group.add_argument("--fano", action="store_true")
    group.add_argument("--rdp-to-dp", dest="rdp_to_dp", action="store_true")
    group.add_argument("--partition-to-user", dest="partition_to_user", action="store_true")
    group.add_argument("--user-to-partition", dest="user_to_partition", action="store_true")
    group.add_argument("--group", action="store_true")
    p.add_argument("--eps", type=_parse_float)
    p.add_argument("--alpha", type=_parse_float, default=2.0)
    p.add_argument("--delta", type=_parse_float, default=1e-5)
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--C", type=_parse_float, default=10.0)
    p.add_argument("--kappa", type=int, default=1)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--claim-in", dest="claim_in", help="start from a saved claim JSON")
    p.add_argument("--claim-out", dest="claim_out", help="write the resulting claim JSON")
    p.set_defaults(fn=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CapacityError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SubmixError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
