"""``mtbias-audit`` command line. Exit status 0 on success, 2 on malformed input."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attention, compression, gender, lang_id, report, sense_bias, text_metrics
from .schema import SchemaError, read_jsonl, write_jsonl
from .tensor_store import WeightFormatError, WeightSet, load_weights, save_weights, sparsity
from .toy_transformer import ModelConfig, ToyTransformer

EXIT_SCHEMA = 2


def _dump(path, doc) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ratios(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def _load_model_weights(path):
    """Float weights plus activation fake-quant params; accepts MTBW or MTBQ files."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == compression.QMAGIC:
        qmap, layer_of, group_of = compression.load_quantized(path)
        names = [n for n in qmap if not n.startswith("act:")]
        ws = WeightSet({n: compression.dequantize(qmap[n]) for n in names},
                       {n: layer_of[n] for n in names}, {n: group_of[n] for n in names})
        return ws, compression.activation_params(qmap)
    return load_weights(path), None


def _source_ids(cfg: ModelConfig, doc: dict) -> list[int]:
    if "tokens" in doc:
        return [int(t) for t in doc["tokens"]]
    return cfg.tokenize(doc["source"])


# --- subcommands ---------------------------------------------------------------

def cmd_run(args):
    cfg = report.AuditConfig.from_json(args.config)
    if args.threads:
        cfg = report.AuditConfig(**{**cfg.__dict__, "threads": args.threads})
    rep = report.run_audit(cfg)
    print(f"audited {rep['n_records']} sentences over {rep['n_pairs']} pairs -> {cfg.out_dir}")


def cmd_demo(args):
    from .demo import build_demo

    report_path = None
    path = build_demo(args.out, n_sentences=args.n, p=args.p, svg=args.svg)
    if args.run:
        cfg = report.AuditConfig.from_json(path)
        report.run_audit(cfg)
        report_path = cfg.out_dir
    print(f"demo written to {args.out}" + (f"; report in {report_path}" if report_path else ""))


def cmd_prune(args):
    ws = load_weights(args.inp)
    out = compression.magnitude_prune(ws, args.p, compression.PruneStrategy(args.strategy))
    save_weights(out, args.out)
    print(f"sparsity {sparsity(out):.4f} -> {args.out}")


def cmd_quantize(args):
    ws = load_weights(args.inp)
    calib = {}
    if args.calib:
        acts = load_weights(args.calib)
        calib = {n: [acts[n]] for n in acts.names()}
    spec = compression.QuantSpec(calib_grid=args.grid, activation_sites=tuple(sorted(calib)))
    qmap = compression.quantize(ws, calib, spec)
    compression.save_quantized(qmap, ws, args.out)
    print(f"quantized {len(ws)} tensors, {len(calib)} activation sites -> {args.out}")


def cmd_translate(args):
    cfg = ModelConfig.from_json(args.config)
    ws, act_quant = _load_model_weights(args.weights)
    docs = read_jsonl(args.inp, lambda d: (str(d.get("pair_id", "")), _source_ids(cfg, d)))
    record = {} if args.record_acts else None
    if record is not None:
        model = ToyTransformer(cfg, ws, act_quant, record)
        results = [model.greedy(src) for _, src in docs]
    else:
        results = report.translate(cfg, ws, [s for _, s in docs], act_quant)
    write_jsonl(args.out, ({"pair_id": pid, "tokens": r.tokens,
                            "hypothesis": cfg.detokenize(r.tokens)}
                           for (pid, _), r in zip(docs, results)))
    if args.attn:
        write_jsonl(args.attn, (attention.attention_doc(pid, r.cross_attention)
                                for (pid, _), r in zip(docs, results)))
    if record is not None:
        acts = {n: np.concatenate([a.reshape(-1, a.shape[-1]) for a in v]) for n, v in record.items()}
        save_weights(WeightSet(acts, {n: n for n in acts}, {n: "other" for n in acts}),
                     args.record_acts)
    print(f"translated {len(docs)} sentences -> {args.out}")


def cmd_score(args):
    recs = text_metrics.read_records(args.inp)
    tok = text_metrics.TOKENIZERS[args.tokenizer]
    if args.metric == "chrf":
        rows = ([r.pair_id, r.src_lang, r.tgt_lang,
                 text_metrics.chrf(r.reference, r.hyp_base, args.max_n, args.beta),
                 text_metrics.chrf(r.reference, r.hyp_comp, args.max_n, args.beta)] for r in recs)
        report.write_csv(args.out, ["pair_id", "src", "tgt", "chrf_base", "chrf_comp"], rows)
    else:
        by_pair = {}
        for r in recs:
            by_pair.setdefault(r.pair, []).append(r)
        rows = ([s, t, text_metrics.corpus_bleu(v, "base", tok), text_metrics.corpus_bleu(v, "comp", tok)]
                for (s, t), v in sorted(by_pair.items()))
        report.write_csv(args.out, ["src", "tgt", "bleu_base", "bleu_comp"], rows)


def cmd_delta(args):
    recs = text_metrics.read_records(args.inp)
    outs = text_metrics.delta_partition(recs, args.threshold)
    write_jsonl(args.out, ({"pair_id": r.pair_id, "src_lang": r.src_lang, "tgt_lang": r.tgt_lang,
                            "delta": o.delta, "bucket": o.bucket.value}
                           for r, o in zip(recs, outs)))


def cmd_lid_train(args):
    profiles = lang_id.train_profiles(lang_id.read_corpora_dir(args.corpora), args.k)
    lang_id.save_profiles(profiles, args.out)
    print(f"{len(profiles)} profiles -> {args.out}")


def cmd_lid_offtarget(args):
    recs = text_metrics.read_records(args.inp)
    rate, n = lang_id.off_target_rate(recs, lang_id.load_profiles(args.profiles), args.which)
    _dump(args.out, {"which": args.which, "rate": rate, "evaluated": n, "records": len(recs)})


def cmd_align(args):
    deltas = read_jsonl(args.inp, lambda d: (str(d["pair_id"]), text_metrics.Bucket(d["bucket"])))
    base = attention.read_attention(args.attn_base)
    comp = attention.read_attention(args.attn_comp)
    want = text_metrics.Bucket(args.subset)
    pairs = []
    for pid, b in deltas:
        if b is want:
            if pid not in base or pid not in comp:
                raise SchemaError(f"no attention matrix for pair_id {pid!r}")
            pairs.append((base[pid], comp[pid]))
    _dump(args.out, {"subset": args.subset, **attention.alignment_summary(pairs)})


def cmd_gender(args):
    _dump(args.out, gender.gender_report(gender.read_gender(args.inp)))


def cmd_wsd(args):
    _dump(args.out, sense_bias.sense_report(sense_bias.read_senses(args.inp)))


def cmd_sweep(args):
    cfg = ModelConfig.from_json(args.config)
    ws = load_weights(args.weights)
    recs = text_metrics.read_records(args.inp)
    sources = [cfg.tokenize(r.source) for r in recs]
    strategies = [compression.PruneStrategy(s) for s in args.strategy]
    rows = report.sweep(cfg, ws, sources, [r.reference for r in recs], args.ratios, strategies,
                        args.tokenizer)
    report.write_csv(args.out, ["strategy", "p", "bleu"],
                     ([r["strategy"], r["p"], r["bleu"]] for r in rows))
    for r in rows:
        print(f"{r['strategy']:>18}  p={r['p']:.2f}  BLEU={r['bleu']:.2f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtbias-audit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full audit from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("demo", help="write a synthetic demo audit folder")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--run", action="store_true", help="also run the audit")
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("prune", help="magnitude pruning")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--strategy", default="transformer-layer",
                   choices=[s.value for s in compression.PruneStrategy])
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("quantize", help="int8 post-training quantization")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--calib", help="MTBW file of activation batches, one tensor per site")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=100)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("translate", help="greedy decode with the toy model")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True, help="MTBW or MTBQ file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--attn")
    p.add_argument("--record-acts", help="write linear-layer inputs here (MTBW) for calibration")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("score", help="per-sentence ChrF or per-pair BLEU")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--metric", choices=["chrf", "bleu"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", choices=sorted(text_metrics.TOKENIZERS), default="whitespace")
    p.add_argument("--max-n", type=int, default=6)
    p.add_argument("--beta", type=float, default=3.0)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("delta", help="ChrF difference and Losing/Winning buckets")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_delta)

    p = sub.add_parser("lid", help="language identification")
    lsub = p.add_subparsers(dest="lid_command", required=True)
    q = lsub.add_parser("train")
    q.add_argument("--corpora", required=True, help="directory of <lang>.txt files")
    q.add_argument("--out", required=True)
    q.add_argument("--k", type=int, default=300)
    q.set_defaults(fn=cmd_lid_train)
    q = lsub.add_parser("offtarget")
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--profiles", required=True)
    q.add_argument("--which", choices=["base", "comp"], default="comp")
    q.add_argument("--out")
    q.set_defaults(fn=cmd_lid_offtarget)

    p = sub.add_parser("align", help="relative alignment over a delta subset")
    p.add_argument("--in", dest="inp", required=True, help="delta.jsonl")
    p.add_argument("--attn-base", required=True)
    p.add_argument("--attn-comp", required=True)
    p.add_argument("--subset", choices=["losing", "winning"], default="losing")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("gender", help="gender F1 and fairness ratios")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gender)

    p = sub.add_parser("wsd", help="word-sense bias metrics")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_wsd)

    p = sub.add_parser("sweep", help="BLEU across sparsity ratios")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="inp", required=True, help="corpus.jsonl with source and reference")
    p.add_argument("--ratios", type=_ratios, default=[0.0, 0.1, 0.2, 0.3, 0.45, 0.6])
    p.add_argument("--strategy", nargs="+", default=["transformer-layer"],
                   choices=[s.value for s in compression.PruneStrategy])
    p.add_argument("--tokenizer", choices=sorted(text_metrics.TOKENIZERS), default="whitespace")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (SchemaError, WeightFormatError) as exc:
        print(f"mtbias-audit: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, KeyError, OSError) as exc:
        print(f"mtbias-audit: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
