"""Command-line entry point: preprocess -> train -> sample/reconstruct ->
evaluate, plus a gradient-check utility.

Every command writes a manifest.json next to its artifacts recording the
effective configuration, its hash, the serialization-stats fingerprint
(where applicable), the seed, and SHA-256 digests of all input files.
Timestamps live only in the manifest, so train_log.csv and report.json
are byte-reproducible for a fixed seed.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 stats-fingerprint
mismatch, 4 numerical failure.

Config files are INI-style with sections mirroring the library modules
([preprocess], [model], [train], [sample]); command-line flags override
file values.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import hashlib
import json
import os
import shutil
import sys

import numpy as np

from . import data_io, diffusion, metrics, sampler, serialization, trainer
from .checkpoint import load_checkpoint
from .denoiser import Denoiser, ModelConfig
from .gradcheck import NumericalError, gradcheck
from .objective import LossConfig, dual_loss
from .serialization import N_SPECIAL, GeneVocab
from .trainer import NumericalAbort, TrainConfig


class UsageError(ValueError):
    pass


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_FINGERPRINT = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config / manifest plumbing ------------------------------------------

def load_config(path):
    """INI config -> {section: {key: str}}; missing path -> {}."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    return {s: dict(cp.items(s)) for s in cp.sections()}


def cfg_get(config, section, key, flag_value, default, cast):
    """Flag > config file > default."""
    if flag_value is not None:
        return flag_value
    raw = config.get(section, {}).get(key)
    if raw is None:
        return default
    if cast is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return cast(raw)


def write_manifest(out_dir, command, effective_config, seed, inputs,
                   started, stats_fingerprint=None):
    payload = {
        "command": command,
        "effective_config": effective_config,
        "config_hash": hashlib.sha256(
            json.dumps(effective_config, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "stats_fingerprint": stats_fingerprint,
        "inputs": {p: data_io.file_sha256(p) for p in inputs},
        "timestamps": {
            "started": started,
            "finished": datetime.datetime.now(
                datetime.timezone.utc).isoformat()},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"required input not found: {path}")
    return path


# -- commands -------------------------------------------------------------

def cmd_preprocess(args):
    started = _now()
    config = load_config(args.config)

    def opt(key, flag, default, cast):
        return cfg_get(config, "preprocess", key, flag, default, cast)

    top_l = opt("top_l", args.top_l, 64, int)
    n_bins = opt("n_bins", args.n_bins, 32, int)
    binning = opt("binning", args.binning, "quantile", str)
    min_genes = opt("min_genes", args.min_genes, 1, int)
    scale = opt("scale", args.scale, 1e4, float)

    os.makedirs(args.out, exist_ok=True)
    inputs = []
    if args.synthetic:
        spec = data_io.SyntheticSpec(
            n_cell_types=args.types, n_cells=args.cells, n_genes=args.genes,
            marker_genes_per_type=args.markers, dropout_rate=args.dropout,
            rng_seed=args.seed)
        m, meta = data_io.generate_synthetic(spec)
        data_io.write_matrix_market(
            m, os.path.join(args.out, "matrix.mtx"),
            os.path.join(args.out, "genes.tsv"),
            os.path.join(args.out, "cells.tsv"))
        data_io.write_metadata(meta, os.path.join(args.out, "meta.tsv"))
    else:
        if args.data is None:
            raise UsageError("preprocess needs --data DIR or --synthetic")
        mtx = _require(os.path.join(args.data, "matrix.mtx"))
        genes = _require(os.path.join(args.data, "genes.tsv"))
        cells = _require(os.path.join(args.data, "cells.tsv"))
        inputs += [mtx, genes, cells]
        m = data_io.read_matrix_market(mtx, genes, cells)
        meta_path = os.path.join(args.data, "meta.tsv")
        if os.path.exists(meta_path):
            inputs.append(meta_path)
            shutil.copy(meta_path, os.path.join(args.out, "meta.tsv"))

    m = data_io.filter_cells(m, min_genes)
    m = data_io.log_normalize(m, scale=scale)
    stats = serialization.compute_entropy(m, n_bins=n_bins, binning=binning)
    vocab = GeneVocab(tuple(m.gene_names))
    cells = serialization.serialize_matrix(m, stats, vocab, top_l)

    stats_path = os.path.join(args.out, "stats.tsv")
    serialization.save_stats(stats, m.gene_names, stats_path)
    fingerprint = serialization.stats_fingerprint(stats_path)
    serialization.save_serialized(
        cells, os.path.join(args.out, "serialized.jsonl"),
        fingerprint=fingerprint)
    with open(os.path.join(args.out, "vocab.tsv"), "w") as fh:
        fh.write("".join(name + "\n" for name in m.gene_names))

    effective = {"preprocess": {
        "top_l": top_l, "n_bins": n_bins, "binning": binning,
        "min_genes": min_genes, "scale": scale, "synthetic": args.synthetic,
        "l_max": top_l}}
    write_manifest(args.out, "preprocess", effective, args.seed, inputs,
                   started, stats_fingerprint=fingerprint)
    print(f"serialized {len(cells)} cells (l_max={top_l}) -> {args.out}")
    return EXIT_OK


def _model_config_from(config, vocab_size, l_max):
    sec = config.get("model", {})
    preset = sec.get("preset")
    if preset == "tiny":
        return ModelConfig.tiny(vocab_size=vocab_size)
    if preset == "desk":
        return ModelConfig.desk(vocab_size=vocab_size, max_len=l_max)
    if preset == "full-scale":
        return ModelConfig.full_scale()
    if preset:
        raise UsageError(f"unknown model preset {preset!r}")
    kwargs = {"vocab_size": vocab_size, "max_len": l_max}
    for key, cast in (("n_layers", int), ("d_model", int), ("n_heads", int),
                      ("ffn_dim", int), ("vocab_size", int), ("max_len", int),
                      ("rope_base", float), ("rmsnorm_eps", float)):
        if key in sec:
            kwargs[key] = cast(sec[key])
    return ModelConfig(**kwargs)


def _train_config_from(config, args, l_max):
    sec = config.get("train", {})
    kwargs = {"seed": args.seed, "l_max": l_max}
    for key, cast in (("batch_size", int), ("grad_accum_steps", int),
                      ("max_steps", int), ("checkpoint_interval", int),
                      ("log_interval", int), ("l_max", int), ("lr", float),
                      ("beta1", float), ("beta2", float), ("adam_eps", float),
                      ("weight_decay", float), ("warmup_steps", int),
                      ("lambda_val", float)):
        if key in sec:
            kwargs[key] = cast(sec[key])
    if args.max_steps is not None:
        kwargs["max_steps"] = args.max_steps
    return TrainConfig(**kwargs)


def _load_dataset(data_dir):
    ser_path = _require(os.path.join(data_dir, "serialized.jsonl"))
    stats_path = _require(os.path.join(data_dir, "stats.tsv"))
    cells, fingerprint = serialization.load_serialized(ser_path)
    expected = serialization.stats_fingerprint(stats_path)
    if fingerprint and fingerprint != expected:
        raise sampler.CompatibilityError(
            f"serialized.jsonl was produced with different stats than "
            f"{stats_path}")
    return cells, stats_path, expected, ser_path


def cmd_train(args):
    started = _now()
    config = load_config(args.config)
    cells, stats_path, fingerprint, ser_path = _load_dataset(args.data)
    _, gene_names = serialization.load_stats(stats_path)
    vocab_size = N_SPECIAL + len(gene_names)
    l_max = max(len(c) for c in cells)

    model_cfg = _model_config_from(config, vocab_size, l_max)
    train_cfg = _train_config_from(config, args, max(l_max, 1))
    if train_cfg.l_max > model_cfg.max_len:
        raise UsageError(f"l_max {train_cfg.l_max} exceeds model max_len "
                         f"{model_cfg.max_len}")

    os.makedirs(args.out, exist_ok=True)
    shutil.copy(stats_path, os.path.join(args.out, "stats.tsv"))
    model = Denoiser(model_cfg, seed=args.seed)
    ckpt, rows = trainer.fit(
        cells, model, train_cfg, args.out, resume_from=args.resume,
        verbose=not args.quiet,
        extra_state={"stats_fingerprint": fingerprint})

    effective = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    write_manifest(args.out, "train", effective, args.seed,
                   [ser_path, stats_path], started,
                   stats_fingerprint=fingerprint)
    print(f"trained {train_cfg.max_steps} steps; final loss "
          f"{rows[-1]['total']:.4f}; checkpoint {ckpt}")
    return EXIT_OK


def _load_model(checkpoint_path):
    arrays, extra = load_checkpoint(_require(checkpoint_path))
    model = Denoiser(ModelConfig.from_dict(extra["model_config"]))
    model.load_arrays(arrays)
    return model, extra


def cmd_sample(args):
    started = _now()
    model, extra = _load_model(args.checkpoint)
    if args.schedule == "linear":
        schedule = sampler.Schedule.linear(args.steps)
    else:
        schedule = sampler.Schedule.cosine(args.steps)
    length = args.length or model.config.max_len
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as fh:
        for i in range(args.n_cells):
            result = sampler.generate(
                model, length, schedule, seed=trainer._derive_seed(
                    args.seed, "cell", i),
                remask=args.remask == "on", temperature=args.temperature,
                argmax=args.argmax)
            fh.write(json.dumps({
                "cell_id": f"generated{i:05d}",
                "tokens": [int(t) for t in result.tokens],
                "values": [float(v) for v in result.values],
                "masked_after_step": result.masked_after_step}) + "\n")
    effective = {"sample": {
        "steps": args.steps, "schedule": args.schedule,
        "remask": args.remask, "temperature": args.temperature,
        "argmax": args.argmax, "n_cells": args.n_cells, "length": length}}
    write_manifest(out_dir, "sample", effective, args.seed,
                   [args.checkpoint], started,
                   stats_fingerprint=extra.get("stats_fingerprint"))
    print(f"wrote {args.n_cells} generated cells -> {args.out}")
    return EXIT_OK


def _parse_mode(mode):
    if mode == "one-step":
        return "one-step", 1
    if mode.endswith("-step"):
        try:
            return "schedule", int(mode[:-5])
        except ValueError:
            pass
    raise UsageError(f"mode must be 'one-step' or '<K>-step', got {mode!r}")


def cmd_reconstruct(args):
    started = _now()
    model, extra = _load_model(args.checkpoint)
    cells, stats_path, fingerprint, ser_path = _load_dataset(args.data)
    mode, steps = _parse_mode(args.mode)
    if args.limit:
        cells = cells[:args.limit]
    records = sampler.reconstruct_eval(
        model, cells, t=args.t, mode=mode, steps=steps, seed=args.seed,
        l_max=model.config.max_len,
        fingerprint=fingerprint,
        expected_fingerprint=extra.get("stats_fingerprint") or fingerprint)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "truth.jsonl"), "w") as tf, \
            open(os.path.join(args.out, "pred.jsonl"), "w") as pf:
        for rec in records:
            tf.write(json.dumps({"cell_id": rec.cell_id,
                                 "tokens": rec.truth_tokens,
                                 "values": rec.truth_values}) + "\n")
            pf.write(json.dumps({"cell_id": rec.cell_id,
                                 "tokens": rec.pred_tokens,
                                 "values": rec.pred_values,
                                 "masked_positions": rec.masked_positions})
                     + "\n")
    effective = {"reconstruct": {"t": args.t, "mode": args.mode,
                                 "n_cells": len(records)}}
    write_manifest(args.out, "reconstruct", effective, args.seed,
                   [args.checkpoint, ser_path], started,
                   stats_fingerprint=fingerprint)
    print(f"reconstructed {len(records)} cells at t={args.t} -> {args.out}")
    return EXIT_OK


def _read_jsonl(path):
    rows = []
    with open(_require(path)) as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _read_table(path, n_fields):
    rows = []
    with open(_require(path)) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < n_fields:
                raise data_io.FormatError(f"malformed row in {path}: {line!r}")
            rows.append(parts)
    return rows


def cmd_evaluate(args):
    started = _now()
    os.makedirs(args.out, exist_ok=True)
    if args.what == "recon":
        truth = {r["cell_id"]: r for r in _read_jsonl(args.truth)}
        preds = _read_jsonl(args.pred)
        records = []
        for p in preds:
            if p["cell_id"] not in truth:
                raise data_io.ValidationError(
                    f"prediction for unknown cell {p['cell_id']!r}")
            t = truth[p["cell_id"]]
            records.append(sampler.ReconRecord(
                cell_id=p["cell_id"],
                truth_tokens=t["tokens"], truth_values=t["values"],
                pred_tokens=p["tokens"], pred_values=p["values"],
                masked_positions=p.get(
                    "masked_positions", list(range(len(t["tokens"]))))))
        report = metrics.reconstruction_report(records)
    elif args.what == "integration":
        meta = data_io.read_metadata(args.truth)
        rows = _read_table(args.pred, 2)
        emb_by_id = {r[0]: [float(x) for x in r[1:]] for r in rows}
        ids = [c for c in meta.cell_ids if c in emb_by_id]
        if not ids:
            raise data_io.ValidationError(
                "no overlapping cell ids between truth and embeddings")
        emb = np.array([emb_by_id[c] for c in ids])
        index = {c: i for i, c in enumerate(meta.cell_ids)}
        batches = [meta.batch[index[c]] for c in ids]
        types = [meta.cell_type[index[c]] for c in ids]
        report = metrics.integration_report(emb, batches, types,
                                            seed=args.seed)
    else:   # perturb
        truth_rows = _read_table(args.truth, 3)
        pred_rows = _read_table(args.pred, 2)
        pred_by_gene = {r[0]: float(r[1]) for r in pred_rows}
        genes = [r[0] for r in truth_rows]
        missing = [g for g in genes if g not in pred_by_gene]
        if missing:
            raise data_io.ValidationError(
                f"missing predictions for genes: {missing[:5]}")
        delta = metrics.PerturbDelta(
            delta_true=[float(r[1]) for r in truth_rows],
            delta_pred=[pred_by_gene[g] for g in genes],
            mean_expression=[float(r[2]) for r in truth_rows])
        report = metrics.perturbation_report(delta)
    report.provenance = {"truth": data_io.file_sha256(args.truth),
                         "pred": data_io.file_sha256(args.pred)}
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    write_manifest(args.out, f"evaluate {args.what}",
                   {"evaluate": {"what": args.what}}, args.seed,
                   [args.truth, args.pred], started)
    for key, val in report.metrics.items():
        print(f"{key}\t{val}")
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.config and args.config != "tiny" and os.path.exists(args.config):
        config = load_config(args.config)
        mc = _model_config_from(config, int(config.get("model", {}).get(
            "vocab_size", 20)), int(config.get("model", {}).get("max_len", 8)))
    else:
        mc = ModelConfig.tiny()
    model = Denoiser(mc, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    B, L = 2, mc.max_len
    cells = []
    from .serialization import SerializedCell
    for b in range(B):
        genes = rng.choice(mc.vocab_size - N_SPECIAL, size=L, replace=False)
        cells.append(SerializedCell(
            cell_id=f"gc{b}", tokens=[int(g) + N_SPECIAL for g in genes],
            values=[float(v) for v in rng.uniform(0.5, 3.0, L)]))
    batch = trainer.collate(cells, L)
    corrupted = diffusion.forward_mask(batch, 0.5, seed=args.seed)
    loss_cfg = LossConfig()

    def loss_fn():
        out = model.denoise(corrupted)
        return dual_loss(out, corrupted, loss_cfg).total_tensor

    report = gradcheck(loss_fn, model.parameters(), tolerance=args.tolerance)
    print(f"max relative error {report.max_rel_error:.3e} "
          f"(worst: {report.worst_param})")
    if not report.passed:
        print("FAIL: gradient check exceeded tolerance", file=sys.stderr)
        return EXIT_NUMERICAL
    print("PASS")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="celldiff",
                     description="masked discrete diffusion for serialized "
                                 "single-cell expression")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None)

    p = sub.add_parser("preprocess", parents=[], help="serialize a corpus")
    common(p)
    p.add_argument("--data", default=None,
                   help="directory with matrix.mtx/genes.tsv/cells.tsv")
    p.add_argument("--synthetic", action="store_true",
                   help="generate a labeled synthetic corpus instead")
    p.add_argument("--out", required=True)
    p.add_argument("--top-l", dest="top_l", type=int, default=None)
    p.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p.add_argument("--binning", choices=["quantile", "fixed-width"],
                   default=None)
    p.add_argument("--min-genes", dest="min_genes", type=int, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--cells", type=int, default=2000)
    p.add_argument("--genes", type=int, default=100)
    p.add_argument("--types", type=int, default=5)
    p.add_argument("--markers", type=int, default=20)
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the denoiser")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate cells from the prior")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--schedule", choices=["linear", "cosine"],
                   default="linear")
    p.add_argument("--remask", choices=["on", "off"], default="on")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--argmax", action="store_true")
    p.add_argument("--n-cells", dest="n_cells", type=int, default=16)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--out", required=True, help="output preds.jsonl path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="corrupt-and-reconstruct a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--t", type=float, default=0.3)
    p.add_argument("--mode", default="one-step",
                   help="'one-step' or '<K>-step'")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    common(p)
    p.add_argument("what", choices=["recon", "integration", "perturb"])
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError, data_io.FormatError,
            data_io.ValidationError, data_io.EmptyResultError,
            serialization.EmptyCellError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except sampler.CompatibilityError as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (NumericalAbort, NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
