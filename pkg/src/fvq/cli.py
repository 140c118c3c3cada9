"""Batch command-line surface.

Subcommands: gen, train, compress, decompress, eval, sweep, stats. Every
command takes a JSON profile (--profile) holding the compression-chain
parameters plus optional "waveform", "training", "eval" and "sweep" blocks,
and repeatable --set key=value overrides using dotted paths into that JSON
(values parse as JSON when possible). Each output artifact gets a
<name>.meta.json sidecar with the fully resolved configuration so any run is
reproducible from its logged snapshot.

Exit codes: 0 ok, 2 usage, 3 data/format error, 4 contract violation.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import frontend, metrics, pipeline, upmgq, vectorizer, vq_core, waveform
from .errors import ContractViolationError, FormatError
from .iqstream import read_iqf1, write_iqf1
from .msvq import load_msvq, save_msvq
from .upmgq import load_upmgq, save_upmgq
from .vq_core import load_codebook, save_codebook

log = logging.getLogger("fvq")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONTRACT = 4


def _parse_set(value):
    if "=" not in value:
        raise argparse.ArgumentTypeError(f"--set needs key=value, got {value!r}")
    key, raw = value.split("=", 1)
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError:
        parsed = raw
    return key, parsed


def _apply_overrides(config: dict, overrides):
    for key, value in overrides:
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ContractViolationError(f"cannot override through {part!r}")
        node[parts[-1]] = value
    return config


def _load_config(args) -> dict:
    config = {}
    if args.profile:
        try:
            with open(args.profile) as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.profile}: {exc}") from exc
        if not isinstance(config, dict):
            raise FormatError(f"{args.profile}: profile must be a JSON object")
    _apply_overrides(config, args.set or [])
    if args.seed is not None:
        config.setdefault("waveform", {})["seed"] = args.seed
        config.setdefault("training", {})["seed"] = args.seed
    return config


def _profile_from(config: dict) -> pipeline.CompressionProfile:
    chain = {
        k: v
        for k, v in config.items()
        if k not in ("waveform", "training", "eval", "sweep")
    }
    return pipeline.CompressionProfile.from_dict(chain)


def _waveform_config(block: dict) -> waveform.WaveformConfig:
    block = dict(block or {})
    if isinstance(block.get("snr_db"), str):
        block["snr_db"] = float(block["snr_db"])
    if block.get("snr_db") is None:
        block["snr_db"] = math.inf
    channel = block.pop("channel", "awgn")
    cfg = waveform.WaveformConfig(**block)
    return cfg, channel


def _gen_corpus(block: dict):
    cfg, channel = _waveform_config(block)
    stream = waveform.generate(cfg)
    if channel in ("multipath", "pedb_stand_in"):
        stream = waveform.apply_static_multipath(stream, cfg.seed)
    elif channel != "awgn":
        raise ContractViolationError(f"unknown channel {channel!r}")
    stream.meta["channel"] = channel
    return stream


def _write_sidecar(out_path, command, config):
    with open(f"{out_path}.meta.json", "w") as fh:
        json.dump(
            {"command": command, "resolved_config": config}, fh, indent=2,
            sort_keys=True, default=str,
        )


def _threads(args) -> int:
    if args.threads:
        return args.threads
    return int(os.environ.get("FVQ_THREADS", "1"))


def cmd_gen(args) -> int:
    config = _load_config(args)
    stream = _gen_corpus(config.get("waveform", {}))
    write_iqf1(stream, args.out)
    _write_sidecar(args.out, "gen", config)
    power = stream.power
    print(f"wrote {args.out}: {len(stream)} samples @ {stream.sample_rate} Hz, "
          f"mean power {power:.6f}")
    snr = config.get("waveform", {}).get("snr_db")
    if snr is not None and not math.isinf(float(snr)) and len(stream):
        clean_cfg = dict(config["waveform"])
        clean_cfg["snr_db"] = math.inf
        clean = _gen_corpus(clean_cfg)
        noise = stream.samples - clean.samples
        p_noise = float(np.mean(np.abs(noise) ** 2))
        measured = 10 * math.log10(clean.power / p_noise) if p_noise else math.inf
        print(f"measured SNR {measured:.2f} dB (requested {float(snr):.2f})")
    return EXIT_OK


def _trainer_opts(config):
    block = dict(config.get("training", {}))
    trainer = block.get("trainer", vq_core.MODIFIED)
    if trainer not in (vq_core.CLASSICAL, vq_core.MODIFIED):
        raise ContractViolationError(f"unknown trainer {trainer!r}")
    trials = int(block.get("trials", 2))
    seed = int(block.get("seed", 0))
    stop = vq_core.LloydStop(
        int(block.get("max_iterations", 200)),
        float(block.get("rel_improvement_eps", 1e-4)),
    )
    return trainer, trials, stop, seed


def cmd_train(args) -> int:
    config = _load_config(args)
    profile = _profile_from(config)
    stream = read_iqf1(getattr(args, "in"))
    trainer, trials, stop, seed = _trainer_opts(config)
    artifact = pipeline.train_for_profile(
        stream, profile, trainer, trials, stop, seed
    )
    q = profile.quantizer
    if q.kind == "vq":
        save_codebook(artifact, args.out)
        meta = artifact.training_meta
        for t, d in enumerate(meta.trial_distortions):
            marker = " (rescaled init)" if trainer == vq_core.MODIFIED and t else ""
            log.info("trial %d: distortion %.6g%s", t, d, marker)
        log.info("final distortion %.6g after %d iterations",
                 meta.final_distortion, meta.iterations)
    elif q.kind == "msvq":
        save_msvq(artifact, args.out)
        log.info("stage-1 distortion %.6g; %d stage-2 codebooks",
                 artifact.stage1.training_meta.final_distortion,
                 len(artifact.stage2))
    else:
        save_upmgq(artifact, q.config(profile.q0), args.out)
        log.info("G2 distortion %.6g",
                 artifact.high_vq.training_meta.final_distortion)
    _write_sidecar(args.out, "train", config)
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_artifact(path, profile):
    kind = profile.quantizer.kind
    if kind == "vq":
        return load_codebook(path)
    if kind == "msvq":
        return load_msvq(path)
    if kind == "upmgq":
        return load_upmgq(path)[0]
    raise ContractViolationError("raw profiles take no codebook")


def _print_stage_table(profile, stats):
    cr_formula = pipeline.compression_ratio(profile, stats)
    print(f"  CR (stage formula) : {cr_formula:.4f}")
    print(f"  CR (measured bits) : {stats.cr_measured:.4f}")
    print(f"  stage gains        : CPR {stats.cr_cpr:.4f} x DEC "
          f"{stats.cr_dec:.4f} x Q {stats.quantizer_gain:.4f}")
    print(f"  payload bits       : {stats.payload_bits} "
          f"(side info {stats.side_info_bits})")


def cmd_compress(args) -> int:
    config = _load_config(args)
    profile = _profile_from(config)
    stream = read_iqf1(getattr(args, "in"))
    codebook = None
    if profile.quantizer.kind != "raw":
        if not args.codebook:
            raise ContractViolationError("this profile needs --codebook")
        codebook = _load_artifact(args.codebook, profile)
    bits = pipeline.compress(stream, profile, codebook)
    with open(args.out, "wb") as fh:
        fh.write(bits.to_bytes())
    _write_sidecar(args.out, "compress", config)
    print(f"wrote {args.out}: {len(stream)} samples compressed")
    _print_stage_table(profile, bits.stats)
    return EXIT_OK


def cmd_decompress(args) -> int:
    config = _load_config(args)
    profile = _profile_from(config)
    with open(getattr(args, "in"), "rb") as fh:
        data = fh.read()
    codebook = None
    if profile.quantizer.kind != "raw":
        if not args.codebook:
            raise ContractViolationError("this profile needs --codebook")
        codebook = _load_artifact(args.codebook, profile)
    stream = pipeline.decompress(data, profile, codebook)
    write_iqf1(stream, args.out)
    _write_sidecar(args.out, "decompress", config)
    print(f"wrote {args.out}: {len(stream)} samples")
    return EXIT_OK


def _train_chain_codebook(corpus, profile, opts):
    trainer, trials, stop, seed = opts
    return pipeline.train_for_profile(corpus, profile, trainer, trials, stop, seed)


def cmd_eval(args) -> int:
    """Mismatch matrix: train per labeled corpus, evaluate all pairs."""
    config = _load_config(args)
    profile = _profile_from(config)
    block = config.get("eval")
    if not block or "corpora" not in block:
        raise ContractViolationError('profile needs an "eval" block with "corpora"')
    opts = _trainer_opts(config)
    eval_seed_offset = int(block.get("eval_seed_offset", 7777))
    corpora_spec = block["corpora"]
    train_corpora = {}
    eval_corpora = {}
    for label, wf in corpora_spec.items():
        train_corpora[label] = _gen_corpus(wf)
        wf_eval = dict(wf)
        wf_eval["seed"] = int(wf.get("seed", 0)) + eval_seed_offset
        eval_corpora[label] = _gen_corpus(wf_eval)

    workers = _threads(args)
    labels = list(corpora_spec)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        codebooks = dict(
            zip(
                labels,
                pool.map(
                    lambda lab: _train_chain_codebook(
                        train_corpora[lab], profile, opts
                    ),
                    labels,
                ),
            )
        )
    matrix = metrics.mismatch_matrix(codebooks, eval_corpora, profile)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "mismatch.csv")
    matrix.write_csv(csv_path)
    if args.report == "json":
        with open(os.path.join(args.out, "mismatch.json"), "w") as fh:
            json.dump(
                {
                    "schema": metrics.REPORT_SCHEMA,
                    "train_labels": matrix.train_labels,
                    "eval_labels": matrix.eval_labels,
                    "evm_fd_pct": matrix.evm_fd.tolist(),
                    "evm_td_pct": matrix.evm_td.tolist(),
                    "relative_pct": matrix.relative_pct().tolist(),
                },
                fh, indent=2,
            )
    _write_sidecar(csv_path, "eval", config)
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Rate-distortion sweep over quantizer settings from the profile."""
    config = _load_config(args)
    block = config.get("sweep") or {"points": []}
    points = block.get("points", [])
    opts = _trainer_opts(config)
    rows = []
    header = [
        "label", "quantizer", "entropy_coding", "cr_formula", "cr_measured",
        "evm_td_pct", "evm_fd_pct", "so", "cs",
    ]
    if points:
        train_corpus = _gen_corpus(config.get("waveform", {}))
        eval_wf = dict(config.get("waveform", {}))
        eval_wf["seed"] = int(eval_wf.get("seed", 0)) + int(
            block.get("eval_seed_offset", 7777)
        )
        eval_corpus = _gen_corpus(eval_wf)

        def run_point(point):
            chain = {
                k: v for k, v in config.items()
                if k not in ("waveform", "training", "eval", "sweep")
            }
            chain.update(point.get("profile", {}))
            chain["quantizer"] = point["quantizer"]
            prof = pipeline.CompressionProfile.from_dict(chain)
            codebook = None
            if prof.quantizer.kind != "raw":
                codebook = _train_chain_codebook(train_corpus, prof, opts)
            counter = vq_core.SearchCounter()
            report = pipeline.evaluate_chain(
                eval_corpus, prof, codebook, counter
            )
            return [
                point.get("label", prof.quantizer.kind),
                json.dumps(point["quantizer"], sort_keys=True),
                prof.entropy_coding,
                f"{report.cr_formula:.4f}",
                f"{report.cr_measured:.4f}",
                f"{report.evm_td_pct:.4f}",
                f"{report.evm_fd_pct:.4f}",
                report.so_measured,
                report.cs_measured,
            ]

        with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
            rows = list(pool.map(run_point, points))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    _write_sidecar(args.out, "sweep", config)
    print(f"wrote {args.out} ({len(rows)} points)")
    return EXIT_OK


def cmd_stats(args) -> int:
    """Orthant-entropy and level-statistics reports for the profile corpus."""
    config = _load_config(args)
    profile = _profile_from(config)
    if getattr(args, "in"):
        stream = read_iqf1(getattr(args, "in"))
    else:
        stream = _gen_corpus(config.get("waveform", {}))
    os.makedirs(args.out, exist_ok=True)

    lengths = config.get("stats", {}).get("vector_lengths", [1, 2, 3, 4])
    ent_path = os.path.join(args.out, "orthant_entropy.csv")
    with open(ent_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "l_vq", "entropy_bits"])
        for method in vectorizer.VectorLayout:
            for l_vq in lengths:
                batch = vectorizer.vectorize(stream, method, int(l_vq), seed=1)
                w.writerow(
                    [method.value, l_vq,
                     f"{vectorizer.orthant_entropy(batch):.6f}"]
                )

    scaled = pipeline.frontend_transform(stream, profile)
    stats = upmgq.level_statistics(scaled)
    lev_path = os.path.join(args.out, "level_statistics.csv")
    with open(lev_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "p_one"])
        w.writerow(["sign", f"{stats.sign_negative_p:.6f}"])
        for k, p in zip(stats.levels, stats.p_one):
            w.writerow([int(k), f"{p:.6f}"])
    _write_sidecar(ent_path, "stats", config)
    print(f"wrote {ent_path}")
    print(f"wrote {lev_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvq",
        description="Vector-quantization fronthaul compression toolkit",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_in=False, needs_out=True):
        p.add_argument("--profile", help="JSON profile path")
        p.add_argument("--set", action="append", type=_parse_set,
                       metavar="KEY=VALUE", help="override profile entries")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--report", choices=("csv", "json"), default="csv")
        if needs_in:
            p.add_argument("--in", required=True, help="input path")
        p.add_argument("--out", required=needs_out, help="output path")

    common(sub.add_parser("gen", help="generate a corpus (IQF1)"))
    common(sub.add_parser("train", help="train a codebook artifact"),
           needs_in=True)
    p = sub.add_parser("compress", help="compress an IQF1 file to CPZ1")
    common(p, needs_in=True)
    p.add_argument("--codebook", help="codebook artifact path")
    p = sub.add_parser("decompress", help="decompress a CPZ1 file to IQF1")
    common(p, needs_in=True)
    p.add_argument("--codebook", help="codebook artifact path")
    common(sub.add_parser("eval", help="mismatch matrices"))
    common(sub.add_parser("sweep", help="rate-distortion sweep CSV"))
    p = sub.add_parser("stats", help="orthant entropy / level statistics")
    p.add_argument("--in", required=False, help="optional corpus (IQF1)")
    common(p, needs_in=False)
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _COMMANDS[args.command](args)
    except ContractViolationError as exc:
        log.error("contract violation: %s", exc)
        return EXIT_CONTRACT
    except (FormatError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
