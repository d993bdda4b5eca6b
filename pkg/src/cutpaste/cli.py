"""Command-line entry point.

Subcommands: toygen, match, synth, train, eval, gradcheck, experiment.
Exit codes: 0 success, 1 validation error, 2 runtime failure.

Thread pinning must happen before numpy first loads its BLAS, so main()
inspects --threads/--deterministic and sets the environment before any heavy
import; all handlers import lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _set_thread_env(argv) -> None:
    threads = None
    if "--deterministic" in argv:
        threads = 1
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _common_flags(parser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--deterministic", action="store_true", help="single-thread bit-reproducible mode")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_toygen(args) -> int:
    from .config import dataclass_from_dict
    from .toydata import ToyConfig, gen_dataset

    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = dataclass_from_dict(ToyConfig, data, context="toy.")
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    os.makedirs(args.out, exist_ok=True)
    manifests = gen_dataset(cfg, args.out)
    _write_json(
        {"labeled": cfg.labeled, "unlabeled": cfg.unlabeled, "test": cfg.test, "seed": cfg.seed},
        os.path.join(args.out, "toygen.json"),
    )
    print(json.dumps(manifests))
    return 0


def cmd_match(args) -> int:
    from .colormatch import image_descriptor, match_top_k
    from .train import load_manifest

    labeled = load_manifest(args.labeled, require_mask=True)
    unlabeled = load_manifest(args.unlabeled)
    table = match_top_k(
        [image_descriptor(r.image) for r in unlabeled],
        [image_descriptor(r.image) for r in labeled],
        args.k,
    )
    with open(args.out, "w") as fh:
        for row_idx, row in enumerate(table.rows):
            fh.write(
                json.dumps(
                    {
                        "unlabeled": unlabeled[row_idx].id,
                        "candidates": [
                            {"labeled": labeled[i].id, "distance": dist} for i, dist in row
                        ],
                    }
                )
                + "\n"
            )
    print(f"wrote {len(table.rows)} match rows to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .colormatch import image_descriptor, match_top_k, sample_match
    from .config import parse_config, TrainConfig
    from .pngio import save_mask_png, save_png
    from .rng import SYNTH, UNLABELED, make_rng, stream_id
    from .synthesis import synthesize_with_retry
    from .train import load_manifest

    from .arrays import ValidationError

    cfg = parse_config(args.config) if args.config else TrainConfig().validate()
    seed = args.seed if args.seed is not None else cfg.seed
    labeled = load_manifest(args.labeled, require_mask=True)
    unlabeled = load_manifest(args.unlabeled)
    if not labeled or not unlabeled:
        raise ValidationError("synth: need non-empty labeled and unlabeled manifests")

    table = None
    if cfg.synth.color_matching:
        if args.matches:
            table = _read_match_file(args.matches, labeled, unlabeled)
        else:
            table = match_top_k(
                [image_descriptor(r.image) for r in unlabeled],
                [image_descriptor(r.image) for r in labeled],
                cfg.synth.match_k,
            )

    os.makedirs(args.out, exist_ok=True)
    count = args.count if args.count is not None else len(unlabeled)
    written = 0
    skipped = 0
    with open(os.path.join(args.out, "provenance.jsonl"), "w") as prov:
        for i in range(count):
            u_i = i % len(unlabeled)
            pick_rng = make_rng(seed, stream_id(UNLABELED, i))

            def pick_labeled(attempt, _rng, u_i=u_i):
                if table is not None:
                    l_i = sample_match(table, u_i, pick_rng)
                else:
                    l_i = int(pick_rng.integers(len(labeled)))
                rec = labeled[l_i]
                return rec.image, rec.mask, l_i

            sample, _ = synthesize_with_retry(
                unlabeled[u_i].image,
                pick_labeled,
                cfg.synth,
                make_rng(seed, stream_id(SYNTH, i)),
                provenance_base=(u_i, seed),
            )
            if sample is None:
                skipped += 1
                continue
            image_rel = f"synth_{i:05d}.png"
            mask_rel = f"synth_{i:05d}_mask.png"
            save_png(sample.blended, os.path.join(args.out, image_rel))
            save_mask_png(sample.mask, os.path.join(args.out, mask_rel))
            prov.write(
                json.dumps(
                    {
                        "image": image_rel,
                        "mask": mask_rel,
                        "unlabeled_src": unlabeled[sample.provenance[0]].id,
                        "labeled_src": labeled[sample.provenance[1]].id,
                        "seed": seed,
                    }
                )
                + "\n"
            )
            written += 1
    print(f"wrote {written} synthetic samples to {args.out} ({skipped} skipped)")
    return 0


def _read_match_file(path, labeled, unlabeled):
    from .arrays import ValidationError
    from .colormatch import MatchTable

    by_id = {r.id: i for i, r in enumerate(labeled)}
    rows_by_unlabeled = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            rows_by_unlabeled[row["unlabeled"]] = [
                (by_id[c["labeled"]], float(c["distance"])) for c in row["candidates"]
            ]
    table = MatchTable(kind="file")
    for r in unlabeled:
        if r.id not in rows_by_unlabeled:
            raise ValidationError(f"{path}: no match row for unlabeled id {r.id!r}")
        table.rows.append(rows_by_unlabeled[r.id])
    return table


def cmd_train(args) -> int:
    from .config import TrainConfig, echo_config, parse_config
    from .experiment import hash_inputs
    from .train import save_run, train

    cfg = parse_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    cfg.validate()
    result = train(cfg, args.labeled, args.unlabeled)
    save_run(result, args.out)
    echo_config(cfg, os.path.join(args.out, "config.json"))
    _write_json(
        {
            "seed": cfg.seed,
            "input_hash": hash_inputs([args.labeled, args.unlabeled]),
            "epochs_run": result.epochs_run,
            "stopped_early": result.stopped_early,
            "best_epoch": result.best_epoch,
            "w_pos": result.w_pos,
        },
        os.path.join(args.out, "run.json"),
    )
    last = result.log[-1] if result.log else {}
    print(
        json.dumps(
            {
                "epochs_run": result.epochs_run,
                "final_loss": last.get("loss"),
                "val_jaccard": last.get("val_jaccard"),
                "out": args.out,
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    from .network import SegNet, load_params
    from .pngio import save_png
    from .train import evaluate, load_manifest

    params, in_channels, widths = load_params(args.params, args.index)
    net = SegNet(in_channels, widths)
    metrics = evaluate(net, params, args.manifest, args.threshold)
    _write_json(metrics, args.out)
    if args.maps:
        os.makedirs(args.maps, exist_ok=True)
        for record in load_manifest(args.manifest, require_mask=True):
            prob = net.predict(params, record.image[None])[0]
            save_png(prob[:, :, None], os.path.join(args.maps, f"{record.id}_prob.png"))
    print(json.dumps(metrics))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(
        size=args.size,
        n_samples=args.samples,
        h=args.h,
        seed=args.seed if args.seed is not None else 0,
    )
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    from .experiment import format_report, parse_experiment_config, run_experiment

    spec = parse_experiment_config(args.config)
    report = run_experiment(
        spec["base"],
        spec["variants"],
        spec["seeds"],
        spec["labeled"],
        spec["unlabeled"],
        spec["test"],
        args.out,
    )
    print(format_report(report))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutpaste",
        description="Cut-paste synthesis and background-consistency training for lesion segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="generate the procedural toy benchmark")
    p.add_argument("--config", help="ToyConfig JSON")
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_toygen)

    p = sub.add_parser("match", help="emit the unlabeled->labeled match table")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    _common_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("synth", help="export synthetic samples as PNG pairs")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="train config JSON (synth section is used)")
    p.add_argument("--matches", help="precomputed match table (JSONL)")
    p.add_argument("--count", type=int, default=None)
    _common_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a segmentation network")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", default=None)
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters on a manifest")
    p.add_argument("--params", required=True, help="params.cpt")
    p.add_argument("--index", default=None, help="shape index JSON (default: params.index.json)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--maps", default=None, help="directory for per-image probability PNGs")
    _common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--h", type=float, default=1e-5)
    _common_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment", help="run a config matrix and write a report")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _set_thread_env(argv)
    from .arrays import ValidationError

    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
