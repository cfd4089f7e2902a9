"""Command-line interface: synth, fit, add, translate, eval, sweep.

Every command is deterministic under a fixed seed: artifacts carry no
timestamps, JSON is written with sorted keys, and all randomness flows
through purpose-keyed sub-seeds of the global seed, so rerunning a
command reproduces its output bytes exactly.
"""

import argparse
import hashlib
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__, align, gcca, gcpa
from .dataio import (
    EmbeddingMatrix,
    Manifest,
    ManifestSpace,
    SynthSpec,
    generate_synthetic,
    read_embeddings,
    write_embeddings,
    write_labels,
    write_matrix,
    read_matrix,
)
from .errors import ConfigError, InvalidSpec, SpaceAlignError
from .numkernel import standardize_fit
from .harness import (
    FittedMethod,
    Preprocessor,
    RunConfig,
    agreement_eval,
    cluster_eval_method,
    cycle_consistency_report,
    drift_eval,
    fit_method,
    load_manifest_labels,
    load_split,
    probe_eval,
    retrieval_eval,
    sweep_rows_to_tsv,
    sweep_trust_grid,
)

SPLIT_FILES = {"train": "train.emb", "val": "val.emb", "test": "test.emb"}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _load_config(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "method": getattr(args, "method", None),
        "seed": getattr(args, "seed", None),
        "gcca_rank": getattr(args, "rank", None),
        "tau": getattr(args, "tau", None),
        "lam": getattr(args, "lam", None),
        "common_dim": getattr(args, "common_dim", None),
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "rescale_gpa_norm", False):
        raw["rescale_gpa_norm"] = True
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# artifact persistence


def save_artifacts(fitted: FittedMethod, config: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "run.json",
        {
            "config": config.to_dict(),
            "config_hash": _config_hash(config),
            "space_ids": fitted.space_ids,
            "versions": {"spacealign": __version__, "numpy": np.__version__},
        },
    )
    _write_json(out / "preproc.json", {sid: fitted.preproc[sid].to_dict() for sid in fitted.space_ids})
    _write_json(out / "fit_report.json", fitted.fit_report)
    if fitted.universe is not None:
        fitted.universe.save(out / "universe")
    if fitted.corrector is not None:
        fitted.corrector.save(out / "corrector")
    if fitted.shared_basis is not None:
        fitted.shared_basis.save(out / "gcca")
    if fitted.pairwise is not None:
        pair_dir = out / "pairwise"
        pair_dir.mkdir(exist_ok=True)
        _write_json(pair_dir / "index.json", {"space_ids": fitted.space_ids})
        for (src, dst), omega in fitted.pairwise.items():
            write_matrix(pair_dir / f"map_{src}__{dst}.emb", omega, f"{src}->{dst}")


def load_artifacts(directory) -> tuple[FittedMethod, RunConfig]:
    directory = Path(directory)
    if not (directory / "run.json").exists():
        raise ConfigError(f"no run.json in {directory}; not a fitted model directory")
    run = json.loads((directory / "run.json").read_text(encoding="utf-8"))
    config = RunConfig.from_dict(run["config"])
    preproc_raw = json.loads((directory / "preproc.json").read_text(encoding="utf-8"))
    space_ids = list(run["space_ids"])
    fitted = FittedMethod(
        method=config.method,
        space_ids=space_ids,
        preproc={sid: Preprocessor.from_dict(p) for sid, p in preproc_raw.items()},
        rescale_gpa_norm=config.rescale_gpa_norm,
    )
    if (directory / "fit_report.json").exists():
        fitted.fit_report = json.loads((directory / "fit_report.json").read_text(encoding="utf-8"))
    if (directory / "universe").exists():
        fitted.universe = align.Universe.load(directory / "universe")
    if (directory / "corrector").exists():
        fitted.corrector = gcpa.Corrector.load(directory / "corrector")
    if (directory / "gcca").exists():
        fitted.shared_basis = gcca.SharedBasisModel.load(directory / "gcca")
    pair_dir = directory / "pairwise"
    if pair_dir.exists():
        index = json.loads((pair_dir / "index.json").read_text(encoding="utf-8"))
        fitted.pairwise = {}
        for src in index["space_ids"]:
            for dst in index["space_ids"]:
                if src != dst:
                    fitted.pairwise[(src, dst)] = read_matrix(pair_dir / f"map_{src}__{dst}.emb")
    return fitted, config


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec_raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if "weak_pair" in spec_raw and spec_raw["weak_pair"] is not None:
        indices, strength = spec_raw["weak_pair"]
        spec_raw["weak_pair"] = (tuple(indices), float(strength))
    if args.seed is not None:
        spec_raw["seed"] = args.seed
    try:
        spec = SynthSpec(**spec_raw)
    except (InvalidSpec, TypeError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc
    result = generate_synthetic(spec)
    out = Path(args.out)
    for sid in result.space_ids:
        space_dir = out / "spaces" / sid
        space_dir.mkdir(parents=True, exist_ok=True)
        for split, fname in SPLIT_FILES.items():
            write_embeddings(result.embeddings[(sid, split)], space_dir / fname)
    write_labels(result.labels, out / "labels.json")
    manifest = Manifest(
        spaces=[ManifestSpace(sid, f"spaces/{sid}", spec.dim) for sid in result.space_ids],
        splits=dict(SPLIT_FILES),
        labels="labels.json",
        weak_pair=result.weak_space_ids,
        root=out,
    )
    manifest.save(out / "manifest.json")
    print(f"wrote {len(result.space_ids)} spaces under {out}")
    return 0


def cmd_fit(args) -> int:
    config = _load_config(args)
    manifest = Manifest.load(args.manifest)
    fitted = fit_method(manifest, config)
    save_artifacts(fitted, config, Path(args.out))
    summary = {k: v for k, v in fitted.fit_report.items() if not isinstance(v, list)}
    if "dispersion_log" in fitted.fit_report:
        summary["dispersion_final"] = fitted.fit_report["dispersion_log"][-1]
    if "loss_log" in fitted.fit_report:
        summary["loss_final"] = fitted.fit_report["loss_log"][-1]
    print(f"fit {config.method} on {len(fitted.space_ids)} spaces -> {args.out} {summary}")
    return 0


def cmd_add(args) -> int:
    fitted, config = load_artifacts(args.model)
    if fitted.universe is None:
        raise ConfigError("add requires a fitted universe (method gpa or gcpa)")
    new = read_embeddings(args.new_space)
    if new.space_id in fitted.space_ids:
        raise ConfigError(f"space id {new.space_id!r} already in the universe")
    state = Preprocessor(standardizer=standardize_fit(new.data))
    prepared = state.apply(new.data)
    if prepared.shape[1] != fitted.universe.dim:
        raise ConfigError(
            f"new space dim {prepared.shape[1]} != universe dim {fitted.universe.dim}; preprocess to a common dim first"
        )
    extended = align.gpa_add(
        fitted.universe,
        EmbeddingMatrix(new.space_id, new.split, prepared, new.sample_ids),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = Path(args.model)
    for name in ("fit_report.json",):
        if (src / name).exists():
            shutil.copyfile(src / name, out / name)
    # base map files are copied byte for byte; only the index and the new map differ
    (out / "universe").mkdir(exist_ok=True)
    for sid in fitted.space_ids:
        shutil.copyfile(src / "universe" / f"omega_{sid}.emb", out / "universe" / f"omega_{sid}.emb")
    shutil.copyfile(src / "universe" / "consensus.emb", out / "universe" / "consensus.emb")
    write_matrix(out / "universe" / f"omega_{new.space_id}.emb", extended.maps[new.space_id], new.space_id)
    _write_json(
        out / "universe" / "index.json",
        {
            "space_ids": extended.space_ids,
            "d": extended.dim,
            "dispersion_final": extended.fit_log[-1] if extended.fit_log else None,
            "fit_log": list(extended.fit_log),
        },
    )
    preproc = {sid: fitted.preproc[sid].to_dict() for sid in fitted.space_ids}
    preproc[new.space_id] = state.to_dict()
    _write_json(out / "preproc.json", preproc)
    run = json.loads((src / "run.json").read_text(encoding="utf-8"))
    run["space_ids"] = extended.space_ids
    _write_json(out / "run.json", run)
    if (src / "corrector").exists():
        shutil.copytree(src / "corrector", out / "corrector", dirs_exist_ok=True)
    print(f"added {new.space_id}; universe now has {len(extended.space_ids)} spaces -> {out}")
    return 0


def cmd_translate(args) -> int:
    fitted, _ = load_artifacts(args.model)
    e = read_embeddings(args.input)
    mapped = fitted.map_between(e.data, args.src, args.dst)
    # back into the target space's raw frame, so outputs compose with inputs
    raw = fitted.preproc[args.dst].invert(mapped)
    write_embeddings(
        EmbeddingMatrix(space_id=args.dst, split=e.split, data=raw, sample_ids=e.sample_ids),
        args.out,
    )
    print(f"translated {e.n} rows {args.src} -> {args.dst} into {args.out}")
    return 0


def cmd_eval(args) -> int:
    fitted, config = load_artifacts(args.model)
    manifest = Manifest.load(args.manifest)
    if "test" not in manifest.splits:
        raise ConfigError("manifest has no test split")
    test = load_split(manifest, "test")
    labels = load_manifest_labels(manifest)
    metrics = tuple(args.metrics.split(",")) if args.metrics else config.eval_metrics
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for metric in metrics:
        if metric == "retrieval":
            report = retrieval_eval(fitted, test, labels["test"] if labels else None)
            _write_json(out / "retrieval.json", report.to_dict())
            (out / "retrieval.tsv").write_text(report.to_tsv(), encoding="utf-8")
        elif metric == "probe":
            if labels is None:
                raise ConfigError("probe evaluation needs a labels file in the manifest")
            train = load_split(manifest, "train")
            accs = probe_eval(fitted, train, test, labels["train"], labels["test"])
            rows = [{"src": s, "dst": d, "accuracy": a} for (s, d), a in sorted(accs.items())]
            _write_json(out / "probe.json", {"pairs": rows, "mean": float(np.mean([r["accuracy"] for r in rows]))})
            lines = ["src\tdst\taccuracy"] + [f"{r['src']}\t{r['dst']}\t{r['accuracy']:.6f}" for r in rows]
            (out / "probe.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        elif metric == "cluster":
            if labels is None:
                raise ConfigError("cluster evaluation needs a labels file in the manifest")
            k = config.cluster_k or int(np.unique(labels["test"]).shape[0])
            report = cluster_eval_method(fitted, test, labels["test"], k, config.cluster_seeds)
            _write_json(out / "cluster.json", report.to_dict())
            lines = ["space\tseed\tari\tnmi"] + [f"{s}\t{sd}\t{a:.6f}\t{n:.6f}" for s, sd, a, n in report.rows]
            (out / "cluster.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        elif metric == "agreement":
            report = agreement_eval(fitted, test, config.agreement_spaces)
            _write_json(out / "agreement.json", report.to_dict())
        elif metric == "drift":
            report = drift_eval(fitted, test)
            _write_json(out / "drift.json", report.to_dict())
        else:
            raise ConfigError(f"unknown eval metric {metric!r}")
    consistency = cycle_consistency_report(fitted)
    if consistency is not None:
        _write_json(out / "consistency.json", consistency)
    print(f"evaluated {','.join(metrics)} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    fitted, config = load_artifacts(args.model)
    if fitted.universe is None:
        raise ConfigError("sweep requires a fitted universe (method gpa or gcpa)")
    manifest = Manifest.load(args.manifest)
    train_raw = load_split(manifest, "train")
    test_raw = load_split(manifest, "test")
    train = [
        EmbeddingMatrix(sid, "train", fitted.prepare(e.data, sid), e.sample_ids) for sid, e in train_raw.items()
    ]
    test = [
        EmbeddingMatrix(sid, "test", fitted.prepare(e.data, sid), e.sample_ids) for sid, e in test_raw.items()
    ]
    taus = [float(t) for t in args.taus.split(",")]
    lams = [float(l) for l in args.lambdas.split(",")]
    rows = sweep_trust_grid(fitted.universe, train, test, taus, lams, config.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "sweep.json", {"rows": rows})
    (out / "sweep.tsv").write_text(sweep_rows_to_tsv(rows), encoding="utf-8")
    print(f"swept {len(taus)}x{len(lams)} grid -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spacealign", description="Universe alignment of embedding spaces")
    parser.add_argument("--version", action="version", version=f"spacealign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic matched spaces from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit an alignment method on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--method", default=None, choices=["na", "pw", "gpa", "gcca", "gcpa"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rank", type=int, default=None, help="GCCA shared rank")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--common-dim", dest="common_dim", type=int, default=None)
    p.add_argument("--rescale-gpa-norm", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("add", help="add one new space to a fitted universe")
    p.add_argument("--model", required=True, help="fitted artifact directory")
    p.add_argument("--new-space", required=True, help="embedding file of the new space (train split)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_add)

    p = sub.add_parser("translate", help="map an embedding file between spaces")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--from", dest="src", required=True)
    p.add_argument("--to", dest="dst", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="run evaluation protocols on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None, help="comma list: retrieval,probe,cluster,agreement,drift")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="trust-penalty grid: drift per (tau, lambda) cell")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--taus", required=True, help="comma-separated tau values")
    p.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpaceAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
