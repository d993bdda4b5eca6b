"""Experiment orchestration: config matrices, paired seeds, reports.

Each (variant, seed) pair trains and evaluates in its own run directory with
everything needed to reproduce it bit-for-bit: the resolved config, the seed
and a content hash of the input manifests. Failed runs are recorded in the
report without aborting the rest of the matrix.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import traceback

import numpy as np

from .arrays import ValidationError
from .config import TrainConfig, config_from_dict, echo_config
from .network import SegNet
from .train import evaluate, save_run, train

METRIC_KEYS = ("auc_pr", "f1", "jaccard")


def hash_inputs(manifest_paths) -> str:
    """sha256 over the manifests and every file they reference."""
    digest = hashlib.sha256()
    for manifest in manifest_paths:
        if not manifest:
            continue
        base = os.path.dirname(os.path.abspath(manifest))
        with open(manifest, "rb") as fh:
            raw = fh.read()
        digest.update(raw)
        for line in raw.decode().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("image", "mask"):
                value = row.get(key)
                if not value:
                    continue
                path = value if os.path.isabs(value) else os.path.join(base, value)
                with open(path, "rb") as fh:
                    digest.update(fh.read())
    return digest.hexdigest()


def expand_matrix(matrix: dict) -> list:
    """Full cross product of synth toggles x consistency variants x lambda_u."""
    allowed = {"toggles", "consistency", "lambda_u"}
    unknown = set(matrix) - allowed
    if unknown:
        raise ValidationError(f"experiment matrix: unknown keys {sorted(unknown)}")
    toggles = matrix.get("toggles", [])
    variants = matrix.get("consistency", ["mse"])
    lambdas = matrix.get("lambda_u", [0.01])
    combos = list(itertools.product([True, False], repeat=len(toggles)))
    out = []
    for toggle_values, variant, lam in itertools.product(combos, variants, lambdas):
        synth = dict(zip(toggles, toggle_values))
        bits = "".join("1" if v else "0" for v in toggle_values)
        name = f"tg{bits}_{variant}_lu{lam}" if toggles else f"{variant}_lu{lam}"
        out.append({"name": name, "overrides": {"consistency": variant, "lambda_u": lam, "synth": synth}})
    return out


def parse_experiment_config(path) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    allowed = {"data", "seeds", "base", "variants", "matrix"}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"{path}: unknown experiment keys {sorted(unknown)}")
    data_section = data.get("data", {})
    for key in ("labeled", "test"):
        if key not in data_section:
            raise ValidationError(f"{path}: experiment data section needs {key!r}")
    seeds = data.get("seeds", [0])
    if not seeds:
        raise ValidationError(f"{path}: need at least one seed")
    base = config_from_dict(data.get("base", {}))
    variants = []
    for entry in data.get("variants", []):
        if "name" not in entry:
            raise ValidationError(f"{path}: every variant needs a name")
        variants.append({"name": entry["name"], "overrides": entry.get("overrides", {})})
    if "matrix" in data:
        variants.extend(expand_matrix(data["matrix"]))
    if not variants:
        raise ValidationError(f"{path}: no variants to run")
    base_dir = os.path.dirname(os.path.abspath(path))
    resolve = lambda p: p if p is None or os.path.isabs(p) else os.path.join(base_dir, p)
    return {
        "labeled": resolve(data_section["labeled"]),
        "unlabeled": resolve(data_section.get("unlabeled")),
        "test": resolve(data_section["test"]),
        "seeds": seeds,
        "base": base,
        "variants": variants,
    }


def run_experiment(
    base: TrainConfig,
    variants: list,
    seeds: list,
    labeled,
    unlabeled,
    test,
    out_dir,
) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    input_hash = hash_inputs([labeled, unlabeled, test])
    rows = []
    for variant in variants:
        runs = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, "runs", f"{variant['name']}__seed{seed}")
            try:
                cfg = base.with_overrides({**variant["overrides"], "seed": int(seed)})
                result = train(cfg, labeled, unlabeled)
                save_run(result, run_dir)
                echo_config(cfg, os.path.join(run_dir, "config.json"))
                net = SegNet(result.in_channels, result.widths)
                metrics = evaluate(net, result.params, test, cfg.eval_threshold)
                with open(os.path.join(run_dir, "metrics.json"), "w") as fh:
                    json.dump(metrics, fh, indent=1, sort_keys=True)
                with open(os.path.join(run_dir, "run.json"), "w") as fh:
                    json.dump(
                        {
                            "seed": int(seed),
                            "input_hash": input_hash,
                            "epochs_run": result.epochs_run,
                            "stopped_early": result.stopped_early,
                            "best_epoch": result.best_epoch,
                            "w_pos": result.w_pos,
                        },
                        fh,
                        indent=1,
                        sort_keys=True,
                    )
                runs.append({"seed": int(seed), "metrics": metrics})
            except Exception as exc:  # record and continue with the rest
                runs.append(
                    {
                        "seed": int(seed),
                        "error": f"{type(exc).__name__}: {exc}",
                        "traceback": traceback.format_exc(),
                    }
                )
        ok = [r["metrics"] for r in runs if "metrics" in r]
        agg = {"n_ok": len(ok), "n_failed": len(runs) - len(ok)}
        for key in METRIC_KEYS:
            values = [m[key] for m in ok]
            agg[f"{key}_mean"] = float(np.mean(values)) if values else None
            agg[f"{key}_std"] = float(np.std(values)) if values else None
        rows.append(
            {"name": variant["name"], "overrides": variant["overrides"], "runs": runs, "summary": agg}
        )
    report = {
        "seeds": [int(s) for s in seeds],
        "data": {"labeled": labeled, "unlabeled": unlabeled, "test": test},
        "input_hash": input_hash,
        "rows": rows,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(format_report(report))
    return report


def format_report(report: dict) -> str:
    header = f"{'variant':<28} {'ok':>3}  " + "  ".join(f"{k + ' mean±std':>20}" for k in METRIC_KEYS)
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        agg = row["summary"]
        cells = []
        for key in METRIC_KEYS:
            mean, std = agg[f"{key}_mean"], agg[f"{key}_std"]
            cells.append(f"{mean:.4f} ± {std:.4f}".rjust(20) if mean is not None else "-".rjust(20))
        lines.append(f"{row['name']:<28} {agg['n_ok']:>3}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"
