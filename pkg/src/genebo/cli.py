"""``genebo`` command line interface.

Exit codes: 0 success, 1 input or domain error, 2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import __version__
from . import acquisition as acq
from . import driver
from .config import MANIFEST_FORMAT, RunConfig
from .errors import ConfigError, DimensionMismatch, GeneBOError, OracleError
from .genome import (
    FEATURE_LAYOUT_VERSION,
    FEATURE_NAMES,
    extract_features,
    feature_matrix,
    format_fasta,
    parse_fasta,
    synonymous_variants,
)
from .io import (
    atomic_write,
    csv_text,
    features_csv,
    join_dataset,
    json_text,
    read_features_csv,
    read_json,
    read_rates_csv,
)
from .surrogate import FittedModel, fit

RULES_FORMAT = "genebo-design-rules/1"
N_DEVIATION_COLUMNS = 10


def _read_fasta(path):
    with open(path) as fh:
        return parse_fasta(fh.read())


def _load_model(path):
    doc = read_json(path)
    layout = doc.get("feature_layout")
    if layout != FEATURE_LAYOUT_VERSION:
        raise DimensionMismatch(
            f"{path}: model feature layout {layout!r} does not match {FEATURE_LAYOUT_VERSION!r}"
        )
    return FittedModel.from_dict(doc)


def _out(args, name):
    return os.path.join(args.out_dir, name)


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _write_outputs(outputs):
    for path, text in outputs.items():
        atomic_write(path, text)


def _manifest(command, cfg, outputs, extra=None):
    doc = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "genebo_version": __version__,
        "feature_layout": FEATURE_LAYOUT_VERSION,
        # out_dir is left out so a replay elsewhere yields the same manifest
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out_dir"},
        "outputs": {os.path.basename(p): _sha256(t) for p, t in sorted(outputs.items())},
    }
    if extra:
        doc.update(extra)
    return json_text(doc)


def _weights_csv(model):
    weights = acq.evaluation_weights(model)
    rows = (
        [name, float(ls), float(w), float(r)]
        for name, ls, w, r in zip(FEATURE_NAMES, model.params.lengthscales, weights.w, weights.raw())
    )
    return csv_text(("feature", "lengthscale", "inverse_lengthscale", "raw_weight"), rows)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_features(args):
    text = features_csv(_read_fasta(args.fasta))
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_fit(args, cfg):
    ids, X = read_features_csv(args.features)
    data, unmatched = join_dataset(ids, X, read_rates_csv(args.rates))
    if unmatched:
        print(f"warning: {len(unmatched)} ids without a match, e.g. {unmatched[:3]}",
              file=sys.stderr)
    if len(data) < 2:
        raise GeneBOError(f"only {len(data)} genes after joining features and rates")
    model = fit(data, cfg.fit_config())
    path = args.output or os.path.join(cfg.out_dir, "model.json")
    atomic_write(path, model.dumps(FEATURE_LAYOUT_VERSION))
    print(f"log_marginal_likelihood={model.log_likelihood!r}")
    print(f"model written to {path}")


def cmd_propose(args, cfg):
    model = _load_model(args.model)
    ids, X = read_features_csv(args.candidates)
    if not ids:
        raise GeneBOError(f"{args.candidates}: no candidates")
    best = acq.incumbent(model.data)
    rules = acq.propose(model, list(zip(ids, X)), best, cfg.xi)
    means, covs = model.predict_arrays(X)
    m, v = acq.averaged_arrays(means, covs)
    ei = acq.ei_arrays(m, v, best, cfg.xi)
    observed = {}
    if args.rates:
        observed = {k: 0.5 * (a + b) for k, (a, b) in read_rates_csv(args.rates).items()}
    scatter = csv_text(
        ("id", "ei", "predicted_average", "predicted_average_sd", "observed_average"),
        ([i, float(e), float(mu), float(np.sqrt(max(var, 0.0))), observed.get(i, "")]
         for i, e, mu, var in zip(ids, ei, m, v)),
    )
    doc = {
        "format": RULES_FORMAT,
        "feature_layout": FEATURE_LAYOUT_VERSION,
        "model_fingerprint": model.data.fingerprint(),
        "incumbent": best,
        "xi": cfg.xi,
        "rules": rules.to_dict(),
    }
    _write_outputs({
        _out(args, "design_rules.json"): json_text(doc),
        _out(args, "ei_scatter.csv"): scatter,
        _out(args, "inverse_lengthscales.csv"): _weights_csv(model),
    })
    print(f"design rules: {rules.provenance} (EI={rules.acquisition_value!r})")


def ranking_csv(ranked, rules, weights):
    top = np.argsort(-weights.w, kind="stable")[:N_DEVIATION_COLUMNS]
    header = ["rank", "id", "score"] + [f"absdev_{FEATURE_NAMES[j]}" for j in top]
    rows = []
    for r, (seq, score) in enumerate(ranked, start=1):
        dev = np.abs(extract_features(seq) - rules.x_star)
        rows.append([r, seq.id, score] + [float(dev[j]) for j in top])
    return csv_text(header, rows)


def cmd_rank(args, cfg):
    model = _load_model(args.model)
    doc = read_json(args.rules)
    if doc.get("format") != RULES_FORMAT or doc.get("feature_layout") != FEATURE_LAYOUT_VERSION:
        raise DimensionMismatch(f"{args.rules}: not a design-rules file for this feature layout")
    rules = acq.DesignRules.from_dict(doc["rules"])
    seqs = _read_fasta(args.seed_fasta)
    if len(seqs) != 1:
        raise GeneBOError(f"{args.seed_fasta}: expected one seed gene, found {len(seqs)}")
    variants = synonymous_variants(seqs[0], cfg.n_variants, rng_seed=cfg.seed)
    weights = acq.evaluation_weights(model)
    ranked = acq.rank_sequences(variants, rules, weights)
    _write_outputs({
        _out(args, "ranking.csv"): ranking_csv(ranked, rules, weights),
        _out(args, "top.fasta"): format_fasta([ranked[0][0]]),
    })
    print(f"top variant {ranked[0][0].id} score={ranked[0][1]!r}")


def _replay_inputs(cfg):
    if not (cfg.fasta and cfg.rates):
        raise ConfigError("the replay oracle needs both 'fasta' and 'rates'")
    seqs = _read_fasta(cfg.fasta)
    data, _ = join_dataset([s.id for s in seqs], feature_matrix(seqs), read_rates_csv(cfg.rates))
    return seqs, data


def _pick_seeds(cfg, sequences, default):
    if not cfg.seed_genes:
        return default
    by_id = {s.id: s for s in sequences}
    missing = [g for g in cfg.seed_genes if g not in by_id]
    if missing:
        raise ConfigError(f"unknown seed genes: {missing}")
    return [by_id[g] for g in cfg.seed_genes]


HISTORY_COLUMNS = ("iteration", "seed_gene", "design_id", "acquisition_value", "sequence_id",
                   "score", "y_alpha", "y_beta", "averaged_rate", "incumbent", "sequence")


def history_csv(history):
    return csv_text(HISTORY_COLUMNS, (
        [r.iteration, r.seed_gene, r.design_id, r.acquisition_value, r.sequence.id, r.score,
         r.rates[0], r.rates[1], r.averaged_rate, r.incumbent, r.sequence.bases]
        for r in history.records
    ))


def cmd_loop(args, cfg):
    if cfg.oracle == "synthetic":
        setup = driver.synthetic_loop_setup(
            cfg.seed, cfg.n_initial, cfg.n_pool, (cfg.noise_std,) * 2, cfg.codon_bias_sd
        )
        initial, pool, oracle = setup.initial, setup.pool, setup.oracle
        known = setup.world.sequences
        seeds = _pick_seeds(cfg, known, setup.seeds)
    else:
        seqs, initial = _replay_inputs(cfg)
        pool = (initial.ids, initial.features)
        oracle = driver.ReplayOracle.from_data(seqs, initial)
        known = seqs
        seeds = _pick_seeds(cfg, seqs, [seqs[0]])
    history = driver.run_loop(initial, pool, seeds, oracle, cfg.loop_config())
    outputs = {_out(args, "history.csv"): history_csv(history)}
    best_seq = history.best_sequence or next(s for s in known if s.id == history.best_id)
    outputs[_out(args, "best.fasta")] = format_fasta([best_seq])
    best = {"best": {"id": history.best_id, "averaged_rate": history.best_value,
                     "initial_incumbent": history.initial_incumbent}}
    outputs[_out(args, "manifest.json")] = _manifest("loop", cfg, outputs, best)
    _write_outputs(outputs)
    print(f"{len(history.records)} iterations, incumbent "
          f"{history.initial_incumbent!r} -> {history.final_incumbent!r}")


PROTOCOL_COLUMNS = (
    "gene_id", "original_y_alpha", "original_y_beta", "original_average",
    "original_average_log", "top_variant_id", "top_score",
    "predicted_y_alpha", "predicted_y_alpha_halfwidth",
    "predicted_y_beta", "predicted_y_beta_halfwidth",
    "predicted_average", "predicted_average_halfwidth",
    "predicted_average_lower", "predicted_average_upper", "true_recombinant_average",
)


def protocol_csv(report):
    rows = []
    for r in report.rows:
        rows.append([
            r.gene_id, *r.original_rates, r.original_average, r.original_average_log,
            r.top_variant_id, r.top_score,
            r.predicted_mean[0], r.predicted_halfwidth[0],
            r.predicted_mean[1], r.predicted_halfwidth[1],
            r.predicted_average, r.predicted_average_halfwidth,
            r.predicted_average - r.predicted_average_halfwidth,
            r.predicted_average + r.predicted_average_halfwidth,
            r.true_recombinant_average,
        ])
    return csv_text(PROTOCOL_COLUMNS, rows)


def cmd_protocol(args, cfg):
    if cfg.oracle == "synthetic":
        world = driver.synthetic_world(cfg.n_pool, seed=cfg.seed,
                                       noise_std=(cfg.noise_std,) * 2,
                                       bias_sd=cfg.codon_bias_sd)
        seqs, data, oracle = world.sequences, world.data, world.cell
    else:
        seqs, data = _replay_inputs(cfg)
        oracle = None
    report = driver.reproduce_protocol(data, seqs, cfg.protocol_config(), oracle)
    scatter = csv_text(("id", "split", "ei", "true_average"),
                       ([s.gene_id, s.split, s.ei, s.true_average] for s in report.scatter))
    outputs = {
        _out(args, "protocol.csv"): protocol_csv(report),
        _out(args, "ei_scatter.csv"): scatter,
        _out(args, "inverse_lengthscales.csv"): _weights_csv(report.model),
        _out(args, "recombinants.fasta"): format_fasta([r.top_sequence for r in report.rows]),
        _out(args, "model.json"): report.model.dumps(FEATURE_LAYOUT_VERSION),
    }
    extra = {"design_rules": report.rules.to_dict(), "incumbent": report.incumbent}
    outputs[_out(args, "manifest.json")] = _manifest("protocol", cfg, outputs, extra)
    _write_outputs(outputs)
    if oracle is not None:
        print(f"recombinant beats original in {report.n_improved()}/{len(report.rows)} genes")
    else:
        print(f"{len(report.rows)} genes recoded")


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


def _common(p, variants=False, threshold=False, loop=False):
    p.add_argument("--config", help="JSON run config (or a run manifest to replay)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, dest="max_iters", help="L-BFGS iterations per restart")
    p.add_argument("--restarts", type=int, dest="n_restarts", help="random restarts")
    p.add_argument("--out-dir", dest="out_dir")
    if variants:
        p.add_argument("--variants", type=int, dest="n_variants")
    if threshold:
        p.add_argument("--threshold", type=float)
    if loop:
        p.add_argument("--iterations", type=int, help="design-loop rounds")


def build_parser():
    parser = argparse.ArgumentParser(prog="genebo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"genebo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="FASTA -> 69-column feature CSV")
    p.add_argument("fasta")
    p.add_argument("-o", "--output", help="write here instead of stdout")

    p = sub.add_parser("fit", help="fit the surrogate, write a model file")
    p.add_argument("features")
    p.add_argument("rates", help="CSV with columns id,y_alpha,y_beta")
    p.add_argument("-o", "--output", help="model path (default OUT_DIR/model.json)")
    _common(p)

    p = sub.add_parser("propose", help="pick design rules by expected improvement")
    p.add_argument("model")
    p.add_argument("candidates", help="feature CSV of candidate genes")
    p.add_argument("--rates", help="observed rates for the scatter output")
    _common(p)

    p = sub.add_parser("rank", help="rank synonymous variants of a seed gene")
    p.add_argument("model")
    p.add_argument("rules", help="design_rules.json from 'propose'")
    p.add_argument("seed_fasta")
    _common(p, variants=True)

    p = sub.add_parser("loop", help="run the closed design loop")
    _common(p, variants=True, loop=True)

    p = sub.add_parser("protocol", help="offline recoding experiment on a gene set")
    _common(p, variants=True, threshold=True)
    return parser


def _config(args):
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "max_iters", "n_restarts", "out_dir", "n_variants", "threshold",
                  "iterations")}
    return cfg.replace(**overrides)


COMMANDS = {
    "fit": cmd_fit,
    "propose": cmd_propose,
    "rank": cmd_rank,
    "loop": cmd_loop,
    "protocol": cmd_protocol,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "features":
            cmd_features(args)
        else:
            cfg = _config(args)
            args.out_dir = cfg.out_dir
            COMMANDS[args.command](args, cfg)
    except OracleError as exc:
        print(f"error: iteration {exc.iteration}: {exc.cause}", file=sys.stderr)
        return 1
    except (GeneBOError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
