#!/usr/bin/env python3
"""BLEU of the demo model against sparsity ratio for each pooling strategy."""

import argparse

import numpy as np

from mtbias.compression import PruneStrategy
from mtbias.demo import build_model, demo_sources
from mtbias.report import sweep, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--ratios", default="0,0.1,0.2,0.3,0.45,0.6,0.8,1")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    model = build_model(args.seed)
    items = demo_sources(model, args.n, args.seed)
    sources = [ids for _, _, ids in items]
    refs = [model.cfg.detokenize([model.mapping[i] for i in ids]) for ids in sources]
    ratios = [float(x) for x in args.ratios.split(",")]
    rows = sweep(model.cfg, model.ws, sources, refs, ratios, list(PruneStrategy))
    write_csv(args.out, ["strategy", "p", "bleu"], ([r["strategy"], r["p"], r["bleu"]] for r in rows))

    table = {}
    for r in rows:
        table.setdefault(r["strategy"], {})[r["p"]] = r["bleu"]
    ps = sorted(set(ratios))
    print(f"{'strategy':>18} " + " ".join(f"{p:>6.2f}" for p in ps))
    for s, vals in table.items():
        print(f"{s:>18} " + " ".join(f"{vals[p]:6.1f}" for p in ps))
    print(f"mean over ratios: " + ", ".join(f"{s} {np.mean(list(v.values())):.1f}" for s, v in table.items()))


if __name__ == "__main__":
    main()
