import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from mtbias import cli
from mtbias.attention import attention_doc
from mtbias.compression import PruneStrategy
from mtbias.demo import build_demo, build_model, demo_sources
from mtbias.lang_id import save_profiles, train_profiles
from mtbias.report import AuditConfig, baseline_bleu, delta_histogram, run_audit, sweep
from mtbias.schema import SchemaError, write_jsonl
from mtbias.synth import DEMO_LANGUAGES
from mtbias.text_metrics import TranslationRecord, write_records

A, B, C = DEMO_LANGUAGES[:3]
BITEXT = {A.code: 50_000, B.code: 500_000, C.code: 5_000_000}


def make_corpus(n_per_pair=6, gibberish_pair=None, same=False):
    recs = []
    for k, (s, t) in enumerate([(A, B), (B, C), (C, A)]):
        refs = t.corpus(n_per_pair, 10 + k)
        for i, ref in enumerate(refs):
            words = ref.split()
            base = " ".join(words[:-1]) if len(words) > 1 else ref
            comp = base if same else ref
            if gibberish_pair == (s.code, t.code):
                comp = "qqq xxx" if i % 2 == 0 else base
            recs.append(TranslationRecord(s.code, t.code, "src", ref, base, comp,
                                          f"{s.code}{t.code}{i}"))
    return recs


def audit_dir(tmp_path: Path, recs, attention="diag", **extra) -> Path:
    write_records(tmp_path / "corpus.jsonl", recs)
    (tmp_path / "res.json").write_text(json.dumps(BITEXT))
    corpora = {L.code: L.corpus(150, 70 + i) for i, L in enumerate((A, B, C))}
    save_profiles(train_profiles(corpora), tmp_path / "prof.json")
    cfg = {"corpus": "corpus.jsonl", "resources": "res.json", "profiles": "prof.json",
           "out_dir": "out", **extra}
    if attention:
        rng = np.random.default_rng(0)
        base, comp = [], []
        for r in recs:
            n = 4
            b = np.eye(n) * 0.9 + 0.1 / n
            c = b if attention == "same" else rng.dirichlet(np.ones(n), n)
            base.append(attention_doc(r.pair_id, b / b.sum(1, keepdims=True)))
            comp.append(attention_doc(r.pair_id, c / c.sum(1, keepdims=True)))
        write_jsonl(tmp_path / "ab.jsonl", base)
        write_jsonl(tmp_path / "ac.jsonl", comp)
        cfg.update(attn_base="ab.jsonl", attn_comp="ac.jsonl")
    (tmp_path / "audit.json").write_text(json.dumps(cfg))
    return tmp_path / "audit.json"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unchanged_corpus_is_all_neutral(tmp_path):
    rep = run_audit(AuditConfig.from_json(audit_dir(tmp_path, make_corpus(same=True), "same")))
    assert all(p["rel_diff_pct"] == 0.0 for p in rep["pairs"])
    assert rep["delta_totals"]["losing"] == rep["delta_totals"]["winning"] == 0
    assert all(v["degenerate"] for v in rep["alignment"].values())
    assert rep["off_target"]["total_losing"] == 0


def test_forced_losing_pair(tmp_path):
    recs = make_corpus(gibberish_pair=(B.code, C.code))
    rep = run_audit(AuditConfig.from_json(audit_dir(tmp_path, recs)))
    row = next(p for p in rep["pairs"] if (p["src"], p["tgt"]) == (B.code, C.code))
    assert row["n_losing"] >= 1
    # B-C pair resource is min(500k, 5M) -> Low
    hist = rep["delta_histogram"]["by_bucket"]["Low"]["counts"]
    leftmost = next(i for i, c in enumerate(hist) if c)
    assert leftmost <= 4                    # Delta < -0.5 lands in the bins below -0.5
    assert rep["off_target"]["total_losing"] == rep["delta_totals"]["losing"] >= 1
    assert rep["off_target"]["comp_pct"] is not None


def test_grouped_means_match_recomputation_from_csv(tmp_path):
    recs = make_corpus(gibberish_pair=(C.code, A.code))
    run_audit(AuditConfig.from_json(audit_dir(tmp_path, recs)))
    rows = [r for r in read_csv(tmp_path / "out" / "pairs.csv") if r["included"] == "true"]
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    for level, col in (("pair", "resource_bucket"), ("source", "src_bucket"),
                       ("target", "tgt_bucket")):
        acc = {}
        for r in rows:
            acc.setdefault(r[col], []).append(float(r["rel_diff_pct"]))
        want = {k: sum(v) / len(v) for k, v in acc.items()}
        assert set(want) == set(report["grouped_means"][level])
        for k, v in want.items():
            assert abs(report["grouped_means"][level][k] - v) <= 1e-9


def test_report_reproducible_and_inputs_untouched(tmp_path):
    path = audit_dir(tmp_path, make_corpus(gibberish_pair=(A.code, B.code)))
    inputs = {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in tmp_path.glob("*.*")}
    run_audit(AuditConfig.from_json(path))
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    cfg = AuditConfig.from_json(path)
    run_audit(AuditConfig(**{**cfg.__dict__, "threads": 3}))
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    first.pop("report.json"), second.pop("report.json")   # config echo differs in threads
    assert first == second
    assert inputs == {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in inputs}


def test_low_baseline_pairs_filtered(tmp_path):
    recs = make_corpus()
    recs = [TranslationRecord(r.src_lang, r.tgt_lang, r.source, r.reference, "zz", "zz", r.pair_id)
            if r.src_lang == A.code else r for r in recs]
    rep = run_audit(AuditConfig.from_json(audit_dir(tmp_path, recs)))
    row = next(p for p in rep["pairs"] if p["src"] == A.code)
    assert row["bleu_base"] == 0.0 and row["included"] is False and row["rel_diff_pct"] is None
    assert rep["n_pairs_included"] == 2


def test_missing_input_names_file(tmp_path):
    path = audit_dir(tmp_path, make_corpus())
    (tmp_path / "res.json").unlink()
    with pytest.raises(SchemaError, match="res.json"):
        run_audit(AuditConfig.from_json(path))


def test_unknown_config_key(tmp_path):
    f = tmp_path / "a.json"
    f.write_text(json.dumps({"corpus": "c", "resources": "r", "out_dir": "o", "beta": 2}))
    with pytest.raises(SchemaError, match="beta"):
        AuditConfig.from_json(f)


def test_language_missing_from_resources(tmp_path):
    path = audit_dir(tmp_path, make_corpus())
    (tmp_path / "res.json").write_text(json.dumps({A.code: 1}))
    with pytest.raises(SchemaError, match=B.code):
        run_audit(AuditConfig.from_json(path))


def test_histogram_bins():
    counts, norm = delta_histogram([-1.0, -0.95, -0.05, 0.0, 0.99, 1.0])
    assert len(counts) == 20 and sum(counts) == 6
    assert counts[0] == 2 and counts[9] == 1 and counts[10] == 1 and counts[19] == 2
    assert sum(norm) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def demo_model():
    model = build_model()
    items = demo_sources(model, 16, seed=2)
    refs = [model.cfg.detokenize([model.mapping[i] for i in ids]) for _, _, ids in items]
    return model, [ids for _, _, ids in items], refs


def test_sweep_rows(demo_model):
    model, sources, refs = demo_model
    rows = sweep(model.cfg, model.ws, sources, refs, [0.3, 0.0, 1.0],
                 [PruneStrategy.TRANSFORMER_LAYER, PruneStrategy.PER_MODULE])
    assert [(r["strategy"], r["p"]) for r in rows] == [
        ("transformer-layer", 0.0), ("transformer-layer", 0.3), ("transformer-layer", 1.0),
        ("per-module", 0.0), ("per-module", 0.3), ("per-module", 1.0)]
    base = baseline_bleu(model.cfg, model.ws, sources, refs)
    assert rows[0]["bleu"] == base and rows[3]["bleu"] == base
    assert rows[2]["bleu"] <= rows[0]["bleu"]
    again = sweep(model.cfg, model.ws, sources, refs, [0.3])
    assert again[0]["bleu"] == rows[1]["bleu"]


def test_sweep_rejects_bad_ratio(demo_model):
    model, sources, refs = demo_model
    with pytest.raises(ValueError):
        sweep(model.cfg, model.ws, sources, refs, [1.2])


# --- CLI -------------------------------------------------------------------------

def test_cli_run_and_schema_exit_code(tmp_path, capsys):
    path = audit_dir(tmp_path, make_corpus())
    assert cli.main(["run", "--config", str(path)]) == 0
    assert (tmp_path / "out" / "pairs.csv").exists()
    (tmp_path / "corpus.jsonl").write_text('{"src_lang": "aaa"}\n')
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "corpus.jsonl:1" in capsys.readouterr().err


def test_cli_module_commands(tmp_path, capsys):
    d = tmp_path / "demo"
    assert cli.main(["demo", "--out", str(d), "--n", "12"]) == 0
    assert cli.main(["delta", "--in", str(d / "corpus.jsonl"), "--out", str(d / "delta.jsonl")]) == 0
    assert cli.main(["align", "--in", str(d / "delta.jsonl"), "--attn-base", str(d / "attn_base.jsonl"),
                     "--attn-comp", str(d / "attn_comp.jsonl"), "--out", str(d / "l.json")]) == 0
    assert "ratio" in json.loads((d / "l.json").read_text())
    assert cli.main(["score", "--in", str(d / "corpus.jsonl"), "--metric", "chrf",
                     "--out", str(d / "chrf.csv")]) == 0
    assert len(read_csv(d / "chrf.csv")) == 12
    assert cli.main(["prune", "--in", str(d / "base.mtbw"), "--out", str(d / "p.mtbw"),
                     "--p", "0.45", "--strategy", "per-module"]) == 0
    assert cli.main(["sweep", "--config", str(d / "model.json"), "--weights", str(d / "base.mtbw"),
                     "--in", str(d / "corpus.jsonl"), "--ratios", "0,0.3",
                     "--out", str(d / "sw.csv")]) == 0
    assert float(read_csv(d / "sw.csv")[0]["bleu"]) == 100.0


def test_cli_translate_quantize_roundtrip(tmp_path):
    d = tmp_path / "demo"
    build_demo(d, n_sentences=4)
    src = d / "src.jsonl"
    lines = [json.loads(l) for l in (d / "corpus.jsonl").read_text().splitlines()]
    write_jsonl(src, ({"pair_id": l["pair_id"], "source": l["source"]} for l in lines))
    assert cli.main(["translate", "--config", str(d / "model.json"), "--weights", str(d / "base.mtbw"),
                     "--in", str(src), "--out", str(d / "h.jsonl"), "--attn", str(d / "a.jsonl"),
                     "--record-acts", str(d / "acts.mtbw")]) == 0
    assert cli.main(["quantize", "--in", str(d / "base.mtbw"), "--calib", str(d / "acts.mtbw"),
                     "--out", str(d / "q.mtbq")]) == 0
    assert cli.main(["translate", "--config", str(d / "model.json"), "--weights", str(d / "q.mtbq"),
                     "--in", str(src), "--out", str(d / "hq.jsonl")]) == 0
    hyps = [json.loads(l)["hypothesis"] for l in (d / "h.jsonl").read_text().splitlines()]
    assert hyps == [l["hyp_base"] for l in lines]


def test_cli_gender_and_wsd(tmp_path):
    g = tmp_path / "g.jsonl"
    write_jsonl(g, [{"gold_gender": "male", "predicted_gender": "male", "stereotype": "pro", "lang": "de"},
                    {"gold_gender": "female", "predicted_gender": "male", "stereotype": "anti", "lang": "de"},
                    {"gold_gender": "female", "predicted_gender": "female", "stereotype": "pro", "lang": "de"},
                    {"gold_gender": "male", "predicted_gender": "male", "stereotype": "anti", "lang": "de"}])
    assert cli.main(["gender", "--in", str(g), "--out", str(tmp_path / "skew.json")]) == 0
    rep = json.loads((tmp_path / "skew.json").read_text())
    assert rep["languages"][0]["lang"] == "de"
    w = tmp_path / "w.jsonl"
    write_jsonl(w, [{"lemma_pos": "bank.n", "gold_index": 2, "correct": False, "polysemy": 3,
                     "predicted_index": 1},
                    {"lemma_pos": "bank.n", "gold_index": 1, "correct": True, "polysemy": 3,
                     "predicted_index": 1}])
    assert cli.main(["wsd", "--in", str(w), "--out", str(tmp_path / "wsd.json")]) == 0
    row = json.loads((tmp_path / "wsd.json").read_text())
    assert set(row) == {"SFII", "SPDI", "MFS", "MFS+", "AVG"}
    write_jsonl(w, [{"lemma_pos": "x", "gold_index": 5, "correct": False, "polysemy": 2}])
    assert cli.main(["wsd", "--in", str(w)]) == 2


def test_threads_env_var(monkeypatch):
    from mtbias.report import thread_count
    monkeypatch.setenv("MTBIAS_THREADS", "3")
    assert thread_count() == 3
    assert thread_count(2) == 2
    monkeypatch.setenv("MTBIAS_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count()
