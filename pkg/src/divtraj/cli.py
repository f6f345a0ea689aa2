"""Command-line front end: dataset generation, sampler training, sampling,
and metric evaluation.

Every command is deterministic given its config and seed; file outputs are
byte-stable across reruns. Config files are strict JSON (unknown keys are
rejected) and individual flags override config values.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .decoders import decoder_from_config
from .dpp import GroundSet, KernelConfig, build_kernel, greedy_map
from .fileio import (
    FORMAT_VERSION,
    metrics_to_csv,
    read_dataset,
    read_model,
    read_samples,
    report_to_dict,
    train_config_from_dict,
    train_config_to_dict,
    write_dataset,
    write_model,
    write_report,
    write_samples,
)
from .flows import AffineFlowSet, apply_flows
from .synth import CrossroadConfig, generate_crossroad
from .trajectory import METRIC_NAMES, Dataset, SampleSet, evaluate_sample_sets
from .training import train_dlow, train_dsf

__all__ = ["main"]


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _apply_overrides(block: dict, args, keys) -> dict:
    out = dict(block)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def cmd_gen_data(args) -> int:
    block = _load_json(args.config)
    out_path = args.out or block.pop("out", None)
    block.pop("out", None)
    if out_path is None:
        raise ValueError("no output path: pass --out or an 'out' config key")
    block = _apply_overrides(block, args, ["seed"])
    unknown = set(block) - set(CrossroadConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown keys in gen-data config: {sorted(unknown)}")
    if "mode_probs" in block:
        block["mode_probs"] = tuple(block["mode_probs"])
    cfg = CrossroadConfig(**block)
    dataset = generate_crossroad(cfg)
    write_dataset(out_path, dataset)
    read_dataset(out_path)  # validation round-trip
    histogram = Counter(ex.meta.get("route", "?") for ex in dataset.examples)
    print(
        f"wrote {len(dataset)} examples to {out_path} "
        f"(T={dataset.meta['T']}, H={dataset.meta['H']}, D={dataset.meta['D']}) "
        f"routes={dict(sorted(histogram.items()))}"
    )
    return 0


def cmd_train(args) -> int:
    block = _load_json(args.config)
    decoder_block = block.pop("decoder", None)
    if decoder_block is None:
        raise ValueError("train config must contain a 'decoder' block")
    block = _apply_overrides(block, args, ["seed", "k"])
    cfg = train_config_from_dict(block)
    decoder = decoder_from_config(decoder_block)
    dataset = read_dataset(args.dataset)
    if cfg.mode == "dsf":
        sampler, report = train_dsf(dataset, decoder, cfg)
        params = {"codes": sampler.codes.tolist()}
    else:
        sampler, report = train_dlow(dataset, decoder, cfg)
        params = {"A": sampler.A.tolist(), "b": sampler.b.tolist()}
        if "featurization" in report.extras:
            params["featurization"] = report.extras["featurization"]
    every = max(1, cfg.iters // 10)
    for entry in report.trace[::every]:
        print(f"iter {entry['iter']:4d} loss {entry['total']:.6f}")
    print(f"final loss {report.final_loss:.6f} (wall {report.wall_time:.2f}s)")
    model = {
        "mode": cfg.mode,
        "n_z": decoder.n_z,
        "K": cfg.k,
        "params": params,
        "decoder": decoder_block,
        "train_config": train_config_to_dict(cfg),
        "seed": cfg.seed,
    }
    write_model(args.model_out, model)
    read_model(args.model_out)
    write_report(args.report_out, report_to_dict(report))
    print(f"wrote model to {args.model_out}, report to {args.report_out}")
    return 0


def _decode_model_samples(model: dict, decoder, example, seed: int):
    """Decode the model's K samples for one example; returns (samples, latents)."""
    if model["mode"] == "dsf":
        latents = np.asarray(model["params"]["codes"], dtype=float)
    else:
        flows = AffineFlowSet(
            A=np.asarray(model["params"]["A"], dtype=float),
            b=np.asarray(model["params"]["b"], dtype=float),
        )
        eps = np.random.default_rng([seed, example.id]).standard_normal(flows.n_z)
        latents = apply_flows(flows, eps)
    samples = decoder.decode_batch(latents, example.context)
    return samples, latents


def cmd_sample(args) -> int:
    model = read_model(args.model)
    decoder = decoder_from_config(model["decoder"])
    dataset = read_dataset(args.dataset)
    k = args.k if args.k is not None else int(model["K"])
    if k != int(model["K"]):
        raise ValueError(f"requested K={k} but the model was trained with K={model['K']}")
    seed = args.seed if args.seed is not None else int(model["seed"])
    kernel_block = dict(model["train_config"].get("kernel", {}))
    kernel_block["base_quality"] = args.omega
    kernel_block.setdefault("latent_dim", model["n_z"])
    kcfg = KernelConfig(**kernel_block)
    records = []
    map_sizes = Counter()
    for example in dataset.examples:
        samples, latents = _decode_model_samples(model, decoder, example, seed)
        rec = {"id": example.id, "samples": samples}
        if args.dpp_map:
            kernel = build_kernel(
                GroundSet(items=samples.reshape(k, -1), latents=latents), kcfg
            )
            rec["dpp_map"] = greedy_map(kernel)
            map_sizes[len(rec["dpp_map"])] += 1
        records.append(rec)
    meta = {"model_mode": model["mode"], "K": k, "seed": seed, "omega": args.omega}
    write_samples(args.out, records, meta=meta)
    read_samples(args.out)
    note = f" map sizes={dict(sorted(map_sizes.items()))}" if args.dpp_map else ""
    print(f"wrote {len(records)} sample sets (K={k}) to {args.out}{note}")
    return 0


def _metric_report(dataset: Dataset, records: list[dict], eps: float):
    sample_sets = {rec["id"]: SampleSet(samples=rec["samples"], context_id=rec["id"]) for rec in records}
    dataset_ids = [ex.id for ex in dataset.examples]
    missing = sorted(set(dataset_ids) - set(sample_sets))
    extra = sorted(set(sample_sets) - set(dataset_ids))
    if missing or extra:
        raise ValueError(f"samples misaligned with dataset: missing ids {missing}, extra ids {extra}")
    return evaluate_sample_sets(dataset, sample_sets, eps)


def cmd_eval(args) -> int:
    dataset = read_dataset(args.dataset)
    records = read_samples(args.samples)
    report = _metric_report(dataset, records, args.eps)
    out_prefix = Path(args.out)
    payload = {
        "format_version": FORMAT_VERSION,
        "conventions": report.conventions,
        "eps": args.eps,
        "means": report.means,
        "per_example": list(report.per_example),
    }
    if args.model is not None:
        if args.seed is None:
            raise ValueError("baseline comparison needs --seed alongside --model")
        model = read_model(args.model)
        decoder = decoder_from_config(model["decoder"])
        k = args.k if args.k is not None else int(model["K"])
        base_records = []
        for example in dataset.examples:
            rng = np.random.default_rng([args.seed, example.id])
            latents = rng.standard_normal((k, int(model["n_z"])))
            base_records.append(
                {"id": example.id, "samples": decoder.decode_batch(latents, example.context)}
            )
        baseline = _metric_report(dataset, base_records, args.eps)
        payload["baseline_means"] = baseline.means
    csv_path = out_prefix.with_suffix(".csv")
    json_path = out_prefix.with_suffix(".json")
    csv_path.write_text(metrics_to_csv(report))
    write_report(json_path, payload)
    print("means: " + " ".join(f"{name}={report.means[name]:.4f}" for name in METRIC_NAMES))
    if "baseline_means" in payload:
        print(
            "baseline: "
            + " ".join(f"{name}={payload['baseline_means'][name]:.4f}" for name in METRIC_NAMES)
        )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divtraj",
        description="Diversity-aware trajectory sampling: data generation, sampler training, sampling, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic crossroad dataset")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out")
    p_gen.add_argument("--seed", type=int)
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="train a sampler against a dataset")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--model-out", required=True)
    p_train.add_argument("--report-out", required=True)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--k", type=int)
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="decode sampler outputs for every example")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--dataset", required=True)
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--k", type=int)
    p_sample.add_argument("--omega", type=float, default=1.0)
    p_sample.add_argument("--seed", type=int)
    p_sample.add_argument("--dpp-map", action="store_true")
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="evaluate sample files against a dataset")
    p_eval.add_argument("--samples", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--eps", type=float, required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--model")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--k", type=int)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
