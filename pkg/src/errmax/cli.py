"""Command-line front end: one subcommand per pipeline stage, a manifest of
artifact hashes for reproducibility checks, and Table-style report rendering.

Exit codes: 0 success, 1 validation (config/manifest/artifact), 2 runtime.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

from . import data as ds
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    ErrmaxError,
    InvalidSpecError,
    ManifestError,
    ParseError,
)
from .loop import (
    RETRAIN_FINE_TUNE,
    RoundConfig,
    RoundReport,
    evaluate,
    make_report,
    retrain,
    run_loop,
    save_reports,
)
from .mining import mine
from .mlp import MlpModel, init_mlp, train

_MANIFEST = "manifest.json"

_TABLE_ROWS = (
    ("Training MSE", "train_mse"),
    ("Test MSE", "test_mse"),
    ("Maximizer MSE", "max_mse"),
    ("Training MAE", "train_mae"),
    ("Test MAE", "test_mae"),
    ("Maximizer MAE", "max_mae"),
)


# --------------------------------------------------------------------- #
# manifest


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_manifest(out: Path) -> dict:
    path = out / _MANIFEST
    if path.exists():
        return json.loads(path.read_text())
    return {"artifacts": {}, "stages": {}}


def _save_manifest(out: Path, manifest: dict) -> None:
    (out / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _verify_inputs(out: Path, manifest: dict, rel_paths: list[str]) -> None:
    """Check required inputs exist and still match their recorded hashes."""
    for rel in rel_paths:
        path = out / rel
        if not path.exists():
            raise ManifestError(f"required artifact missing: {rel}")
        recorded = manifest["artifacts"].get(rel)
        if recorded is not None and _hash_file(path) != recorded["sha256"]:
            raise ManifestError(f"artifact {rel} does not match its recorded hash")


def _record_stage(
    out: Path, manifest: dict, stage: str, cfg_hash: str, rel_paths: list[str], complete: bool = True
) -> None:
    for rel in rel_paths:
        manifest["artifacts"][rel] = {
            "sha256": _hash_file(out / rel),
            "stage": stage,
            "config_sha256": cfg_hash,
        }
    manifest["stages"][stage] = {"complete": complete, "config_sha256": cfg_hash}
    _save_manifest(out, manifest)


# --------------------------------------------------------------------- #
# report rendering


def _fmt_metric(v: float | None) -> str:
    return "-" if v is None else format(v, ".4g")


def render_table(reports: list[RoundReport]) -> str:
    """Markdown table, one column per report: alpha descending, six metric rows."""
    cols = sorted(reports, key=lambda r: (-r.alpha, r.round_index))
    lines = [
        "| alpha | " + " | ".join(format(r.alpha, ".4g") for r in cols) + " |",
        "|---" * (len(cols) + 1) + "|",
    ]
    for label, attr in _TABLE_ROWS:
        cells = " | ".join(_fmt_metric(getattr(r, attr)) for r in cols)
        lines.append(f"| {label} | {cells} |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- #
# stage commands


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    spec = cfg.make_oracle()
    s0 = ds.label(ds.sample_uniform(spec, cfg.data.n_train, cfg.data.seed_train, "S0"), spec)
    test = ds.label(ds.sample_uniform(spec, cfg.data.n_test, cfg.data.seed_test, "test"), spec)
    (out / "data").mkdir(parents=True, exist_ok=True)
    ds.save_csv(s0, out / "data" / "s0.csv")
    ds.save_csv(test, out / "data" / "test.csv")
    manifest = _load_manifest(out)
    _record_stage(out, manifest, "gen-data", cfg.sha256(), ["data/s0.csv", "data/test.csv"])
    print(f"wrote data/s0.csv ({s0.n} rows) and data/test.csv ({test.n} rows)")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    manifest = _load_manifest(out)
    _verify_inputs(out, manifest, ["data/s0.csv"])
    s0 = ds.load_csv(out / "data" / "s0.csv")
    model = init_mlp(cfg.model.layer_dims, cfg.model.init_seed)
    history = train(model, s0.inputs_norm, s0.targets, cfg.train, cfg.train_seed)
    rdir = out / "round_0"
    rdir.mkdir(parents=True, exist_ok=True)
    model.save(rdir / "model.ckpt", extra={"round": 0})
    (rdir / "history.json").write_text(json.dumps(history.to_dict()))
    _record_stage(
        out, manifest, "train", cfg.sha256(), ["round_0/model.ckpt", "round_0/history.json"]
    )
    print(f"trained {history.epochs} epochs, final loss {history.losses[-1]:.6g}")


def cmd_mine(cfg: RunConfig, out: Path, round_index: int, n_threads: int) -> None:
    manifest = _load_manifest(out)
    model_rel = f"round_{round_index}/model.ckpt"
    data_rel = "data/s0.csv" if round_index == 0 else f"round_{round_index}/train.csv"
    _verify_inputs(out, manifest, [model_rel, data_rel])
    model, _ = MlpModel.load(out / model_rel)
    lset = ds.load_csv(out / data_rel)
    spec = cfg.make_oracle()
    mine_cfg = cfg.mine.tightened(cfg.loop.step_tighten, cfg.loop.tol_tighten, round_index)
    result = mine(
        model, spec, lset, mine_cfg, cfg.oracle.fd, round_index=round_index, n_threads=n_threads
    )
    rdir = out / f"round_{round_index}"
    rdir.mkdir(parents=True, exist_ok=True)
    ds.save_csv(result.mined, rdir / "mined.csv")
    with open(rdir / "mine.jsonl", "w") as f:
        for r in result.results:
            f.write(json.dumps(r.to_dict()) + "\n")
    _record_stage(
        out,
        manifest,
        f"mine-{round_index}",
        cfg.sha256(),
        [f"round_{round_index}/mined.csv", f"round_{round_index}/mine.jsonl"],
    )
    note = " (shortfall)" if result.shortfall else ""
    print(f"mined {result.mined.n} maximizers from {result.n_seeds} seeds{note}")


def cmd_retrain(cfg: RunConfig, out: Path, alphas: list[float] | None) -> None:
    manifest = _load_manifest(out)
    inputs = ["data/s0.csv", "data/test.csv", "round_0/mined.csv"]
    if cfg.loop.retrain_mode == RETRAIN_FINE_TUNE:
        inputs.append("round_0/model.ckpt")
    _verify_inputs(out, manifest, inputs)
    base = ds.load_csv(out / "data" / "s0.csv")
    test = ds.load_csv(out / "data" / "test.csv")
    mined = ds.load_csv(out / "round_0" / "mined.csv")
    if cfg.loop.retrain_mode == RETRAIN_FINE_TUNE:
        start_model, _ = MlpModel.load(out / "round_0" / "model.ckpt")
    else:
        start_model = init_mlp(cfg.model.layer_dims, cfg.model.init_seed)

    sweep = cfg.alphas if alphas is None else alphas
    reports: list[RoundReport] = []
    outputs: list[str] = []
    for alpha in sweep:
        round_cfg = RoundConfig(**{**cfg.loop.__dict__, "alpha": alpha})
        model, history = retrain(start_model, base, mined, round_cfg, cfg.train, cfg.train_seed)
        train_eval_set = base if alpha == 1.0 else ds.merge(base, mined, name="S1")
        report = make_report(
            model,
            1,
            alpha,
            train_eval_set,
            test,
            mined,
            cfg.loop.trim_fraction,
            history.epochs,
            mined.n,
            False,
        )
        reports.append(report)
        adir = out / "retrain" / f"alpha_{format(alpha, 'g')}"
        adir.mkdir(parents=True, exist_ok=True)
        model.save(adir / "model.ckpt", extra={"alpha": alpha})
        (adir / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
        rel = f"retrain/alpha_{format(alpha, 'g')}"
        outputs += [f"{rel}/model.ckpt", f"{rel}/report.json"]
        print(f"alpha={alpha:g}: test MAE {report.test_mae:.4g}, maximizer MAE {report.max_mae:.4g}")

    (out / "retrain").mkdir(parents=True, exist_ok=True)
    save_reports(reports, out / "retrain" / "reports.json")
    (out / "retrain" / "table.md").write_text(render_table(reports))
    outputs += ["retrain/reports.json", "retrain/table.md"]
    _record_stage(out, manifest, "retrain", cfg.sha256(), outputs)


def cmd_eval(cfg: RunConfig, out: Path, model_path: str, data_path: str, json_out: str | None) -> None:
    model, _ = MlpModel.load(out / model_path)
    lset = ds.load_csv(out / data_path)
    mse, mae = evaluate(model, lset)
    payload = {"set": lset.name, "n": lset.n, "mse": mse, "mae": mae}
    text = json.dumps(payload, indent=2)
    print(text)
    if json_out is not None:
        (out / json_out).write_text(text)


def cmd_loop(cfg: RunConfig, out: Path, n_threads: int) -> None:
    manifest = _load_manifest(out)
    manifest["stages"]["loop"] = {"complete": False, "config_sha256": cfg.sha256()}
    out.mkdir(parents=True, exist_ok=True)
    _save_manifest(out, manifest)
    spec = cfg.make_oracle()
    reports = run_loop(
        spec,
        cfg.oracle.fd,
        cfg.data.n_train,
        cfg.data.n_test,
        cfg.data.seed_train,
        cfg.data.seed_test,
        cfg.model.layer_dims,
        cfg.model.init_seed,
        cfg.train,
        cfg.train_seed,
        cfg.mine,
        cfg.loop,
        out_dir=out / "loop",
        n_threads=n_threads,
    )
    (out / "loop" / "table.md").write_text(render_table(reports))
    rels = ["loop/reports.json", "loop/table.md"]
    _record_stage(out, manifest, "loop", cfg.sha256(), rels)
    print(render_table(reports))
    print(f"completed {len(reports)} rounds")


# --------------------------------------------------------------------- #
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="errmax", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--seed-override", type=int, default=None, help="offset added to every seed")
        return p

    add("gen-data", "sample and label the base and test sets")
    add("train", "train the first surrogate on the base set")
    p = add("mine", "mine squared-error maximizers from a trained surrogate")
    p.add_argument("--round", type=int, default=0, help="mining round index (tightens schedules)")
    p = add("retrain", "retrain on base + mined for a list of alphas")
    p.add_argument("--alphas", default=None, help="comma-separated alpha values")
    p = add("eval", "evaluate a checkpoint on a labeled CSV")
    p.add_argument("--model", default="round_0/model.ckpt", help="checkpoint path under out dir")
    p.add_argument("--data", default="data/test.csv", help="labeled CSV path under out dir")
    p.add_argument("--json-out", default=None, help="also write the JSON result here")
    add("loop", "run the full multi-round loop")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg.apply_seed_override(args.seed_override)
            cfg.validate()
        out = Path(args.out if args.out is not None else cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads if args.threads is not None else cfg.threads
        if threads == 0:
            threads = os.cpu_count() or 1

        if args.command == "gen-data":
            cmd_gen_data(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "mine":
            cmd_mine(cfg, out, args.round, threads)
        elif args.command == "retrain":
            alphas = None
            if args.alphas is not None:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            cmd_retrain(cfg, out, alphas)
        elif args.command == "eval":
            cmd_eval(cfg, out, args.model, args.data, args.json_out)
        elif args.command == "loop":
            cmd_loop(cfg, out, threads)
        return 0
    except (ConfigError, ManifestError, InvalidSpecError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ErrmaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
