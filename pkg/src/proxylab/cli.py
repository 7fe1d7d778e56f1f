"""Command-line driver for the full experimental protocol.

Subcommands: gen-data, pretrain, finetune, eval, transfer-matrix,
bound-check, pipeline. Every command takes --config/--seed/--out/--dry-run
and writes its artifacts under the --out directory.

Exit codes: 0 success, 2 configuration or contract error, 3 I/O or file
format error, 4 numerical failure (non-finite loss). A manifest listing
config, artifacts, and per-phase wall-clock is written last, so its
presence certifies a complete run.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import evaluation, storage, training
from .config import RunConfig, parse_config, serialize_config
from .datasets import Dataset, generate_synthetic
from .errors import (ConfigError, ContractError, DataError, DomainError,
                     FormatError, NumericalError, ProxylabError, ShapeError)
from .models import DualEncoderModel, init_model

FINETUNE_METHODS = ("hpt_gpd", "aft", "naive_rt", "ard")

# models included in the pipeline's transfer matrix, in row/column order
TRANSFER_MODELS = ("vanilla", "proxy", "hpt_gpd", "naive_rt")

BOUND_TARGETS = ("vanilla", "hpt_gpd")


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_text(text: str, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


class _Manifest:
    """Collects artifact paths and phase timings; written once, at the end."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out_dir = out_dir
        self.artifacts: list[str] = []
        self.phases: list[dict] = []

    def add(self, path: Path) -> Path:
        self.artifacts.append(str(path.relative_to(self.out_dir)))
        return path

    def phase(self, name: str, seconds: float) -> None:
        self.phases.append({"name": name, "seconds": seconds})

    def write(self, name: str = "manifest.json") -> Path:
        doc = {
            "seed": self.cfg.seed,
            "config": serialize_config(self.cfg),
            "artifacts": sorted(self.artifacts),
            "phases": self.phases,
        }
        path = self.out_dir / name
        _json_dump(doc, path)
        return path


def _dataset_paths(out_dir: Path, cfg: RunConfig) -> dict[str, Path]:
    data_dir = out_dir / "data"
    paths = {
        "in_domain_train": data_dir / "in_domain_train.dsb",
        "in_domain_test": data_dir / "in_domain_test.dsb",
    }
    for shift in cfg.synthetic_spec().shifts:
        paths[shift.name] = data_dir / f"downstream_{shift.name}.dsb"
    return paths


def _ckpt_path(out_dir: Path, name: str) -> Path:
    return out_dir / "checkpoints" / f"{name}.ckb"


def _build_model(cfg: RunConfig, role: str) -> DualEncoderModel:
    if role == "vanilla_target":
        return init_model(cfg.target_image_spec(), cfg.target_text_spec(),
                          cfg.num_classes, seed=cfg.seed, temperature=cfg.temperature)
    if role == "proxy":
        return init_model(cfg.proxy_image_spec(), cfg.proxy_text_spec(),
                          cfg.num_classes, seed=cfg.seed + 1, temperature=cfg.temperature)
    raise ConfigError(f"role must be 'vanilla_target' or 'proxy', got '{role}'")


def _run_gen_data(cfg: RunConfig, out_dir: Path, manifest: _Manifest | None = None) -> dict[str, Path]:
    train, test, downstream = generate_synthetic(cfg.synthetic_spec(), cfg.seed)
    paths = _dataset_paths(out_dir, cfg)
    paths["in_domain_train"].parent.mkdir(parents=True, exist_ok=True)
    for ds in [train, test, *downstream]:
        path = paths[ds.domain_id]
        storage.save_dataset(ds, path)
        if manifest:
            manifest.add(path)
        print(f"{ds.domain_id}: {ds.num_samples} samples, "
              f"saturation {ds.saturation:.3%} -> {path}")
    return paths


def _run_pretrain(cfg: RunConfig, role: str, data: Dataset, out_dir: Path,
                  manifest: _Manifest | None = None) -> Path:
    model = _build_model(cfg, role)
    vanilla_role = role == "vanilla_target"
    model, log = training.pretrain_clean(
        model, data,
        epochs=cfg.pretrain_epochs if vanilla_role else cfg.pretrain_proxy_epochs,
        lr=cfg.pretrain_lr if vanilla_role else cfg.pretrain_proxy_lr,
        batch_size=cfg.pretrain_batch_size,
        seed=cfg.seed if vanilla_role else cfg.seed + 1,
        eval_attack=cfg.eval_attack(), log_eval_samples=cfg.log_eval_samples)
    name = "vanilla" if vanilla_role else "proxy"
    ckpt = _ckpt_path(out_dir, name)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(model, ckpt, seed=cfg.seed)
    log_path = out_dir / "logs" / f"pretrain_{name}.csv"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log.save_csv(log_path)
    if manifest:
        manifest.add(ckpt)
        manifest.add(log_path)
    last = log.records[-1] if log.records else None
    if last:
        print(f"pretrain {name}: loss {last.loss:.4f}, "
              f"clean {last.clean_acc:.3f}, adv {last.adv_acc:.3f} -> {ckpt}")
    return ckpt


def _run_finetune(cfg: RunConfig, method: str, vanilla: DualEncoderModel,
                  proxy: DualEncoderModel, data: Dataset, out_dir: Path,
                  manifest: _Manifest | None = None) -> Path:
    tc = cfg.train_config()
    if method == "hpt_gpd":
        model, log = training.run_hpt_gpd(tc, vanilla, proxy, data)
    elif method == "aft":
        model, log = training.aft_baseline(vanilla, data, tc)
    elif method == "naive_rt":
        model, log = training.naive_rt_baseline(vanilla, proxy, data, tc)
    elif method == "ard":
        model, log = training.ard_baseline(vanilla, proxy, data, tc)
    else:
        raise ConfigError(f"method must be one of {FINETUNE_METHODS}, got '{method}'")
    ckpt = _ckpt_path(out_dir, method)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(model, ckpt, seed=cfg.seed)
    log_path = out_dir / "logs" / f"finetune_{method}.csv"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log.save_csv(log_path)
    if manifest:
        manifest.add(ckpt)
        manifest.add(log_path)
    last = log.records[-1] if log.records else None
    if last:
        print(f"finetune {method}: loss {last.loss:.5f}, clean {last.clean_acc:.3f}, "
              f"adv {last.adv_acc:.3f}, dist {last.param_dist:.4f} -> {ckpt}")
    return ckpt


def _eval_model_on(model: DualEncoderModel, datasets: list[Dataset], cfg: RunConfig
                   ) -> list[evaluation.EvalReport]:
    return [evaluation.evaluate(model, ds, cfg.eval_attack()) for ds in datasets]


def _reports_csv(rows: list[tuple]) -> str:
    lines = ["model,dataset,clean_acc,adv_acc"]
    for model_name, report in rows:
        lines.append(f"{model_name},{report.dataset_id},"
                     f"{report.clean_acc!r},{report.adv_acc!r}")
    return "\n".join(lines) + "\n"


def run_pipeline(cfg: RunConfig, out_dir: Path, dry_run: bool = False) -> dict:
    """gen-data, pretrain both stand-ins, fine-tune all methods, evaluate,
    transfer matrix, bound checks, summary; manifest written last."""
    out_dir = Path(out_dir)
    plan = [
        "gen_data", "pretrain_vanilla", "pretrain_proxy",
        *[f"finetune_{m}" for m in FINETUNE_METHODS],
        "evaluate", "transfer_matrix", "bound_check", "summary",
    ]
    if dry_run:
        for name in plan:
            print(f"would run: {name}")
        print(f"would write artifacts under: {out_dir}")
        return {"plan": plan, "out_dir": str(out_dir)}

    manifest = _Manifest(cfg, out_dir)
    clock = time.perf_counter

    try:
        t0 = clock()
        data_paths = _run_gen_data(cfg, out_dir, manifest)
        manifest.phase("gen_data", clock() - t0)

        train = storage.load_dataset(data_paths["in_domain_train"])
        test = storage.load_dataset(data_paths["in_domain_test"])
        downstream = [storage.load_dataset(data_paths[s.name])
                      for s in cfg.synthetic_spec().shifts]

        t0 = clock()
        vanilla_ckpt = _run_pretrain(cfg, "vanilla_target", train, out_dir, manifest)
        manifest.phase("pretrain_vanilla", clock() - t0)
        t0 = clock()
        proxy_ckpt = _run_pretrain(cfg, "proxy", train, out_dir, manifest)
        manifest.phase("pretrain_proxy", clock() - t0)

        vanilla = storage.load_checkpoint(vanilla_ckpt)
        proxy = storage.load_checkpoint(proxy_ckpt)

        finetuned: dict[str, DualEncoderModel] = {}
        for method in FINETUNE_METHODS:
            t0 = clock()
            ckpt = _run_finetune(cfg, method, vanilla, proxy, train, out_dir, manifest)
            finetuned[method] = storage.load_checkpoint(ckpt)
            manifest.phase(f"finetune_{method}", clock() - t0)

        all_models = {"vanilla": vanilla, "proxy": proxy, **finetuned}
        eval_sets = [test, *downstream]

        t0 = clock()
        rows = []
        eval_docs = {}
        for name, model in all_models.items():
            reports = _eval_model_on(model, eval_sets, cfg)
            eval_docs[name] = [r.to_dict() for r in reports]
            rows.extend((name, r) for r in reports)
        _json_dump(eval_docs, manifest.add(out_dir / "reports" / "eval.json"))
        _write_text(_reports_csv(rows), manifest.add(out_dir / "reports" / "eval.csv"))
        manifest.phase("evaluate", clock() - t0)

        t0 = clock()
        tm = evaluation.transfer_matrix(
            [all_models[k] for k in TRANSFER_MODELS], test, cfg.eval_attack(),
            model_ids=list(TRANSFER_MODELS))
        _json_dump(tm.to_dict(), manifest.add(out_dir / "reports" / "transfer_matrix.json"))
        tm_lines = ["forger:" + ",".join(tm.model_ids)]
        for mid, row in zip(tm.model_ids, tm.matrix):
            tm_lines.append(mid + "," + ",".join(repr(v) for v in row))
        _write_text("\n".join(tm_lines) + "\n",
                    manifest.add(out_dir / "reports" / "transfer_matrix.csv"))
        manifest.phase("transfer_matrix", clock() - t0)

        t0 = clock()
        bound_docs = []
        for target_name in BOUND_TARGETS:
            for ds in eval_sets:
                for kind in ("l1_prob", "kl"):
                    rep = evaluation.bound_check(all_models[target_name], proxy, ds,
                                                 cfg.eval_attack(), loss_kind=kind)
                    doc = rep.to_dict()
                    doc["target"] = target_name
                    bound_docs.append(doc)
        _json_dump(bound_docs, manifest.add(out_dir / "reports" / "bound_checks.json"))
        manifest.phase("bound_check", clock() - t0)

        t0 = clock()
        summary = _summarize(eval_docs, eval_sets)
        _json_dump(summary, manifest.add(out_dir / "reports" / "summary.json"))
        sum_lines = ["method,clean_acc_downstream,adv_acc_downstream"]
        for row in summary["methods"]:
            sum_lines.append(f"{row['method']},{row['clean_acc_downstream']!r},"
                             f"{row['adv_acc_downstream']!r}")
        _write_text("\n".join(sum_lines) + "\n",
                    manifest.add(out_dir / "reports" / "summary.csv"))
        manifest.phase("summary", clock() - t0)
        _print_summary(summary)
    except ProxylabError:
        # record what completed, then surface the failure for exit mapping
        manifest.write()
        raise

    manifest_path = manifest.write()
    print(f"manifest -> {manifest_path}")
    doc = {"seed": cfg.seed, "artifacts": sorted(manifest.artifacts),
           "phases": manifest.phases}
    return doc


def _summarize(eval_docs: dict[str, list[dict]], eval_sets: list[Dataset]) -> dict:
    downstream_ids = [ds.domain_id for ds in eval_sets[1:]]
    methods = []
    for name, reports in eval_docs.items():
        by_id = {r["dataset_id"]: r for r in reports}
        down = [by_id[d] for d in downstream_ids]
        methods.append({
            "method": name,
            "clean_acc_in_domain": by_id[eval_sets[0].domain_id]["clean_acc"],
            "adv_acc_in_domain": by_id[eval_sets[0].domain_id]["adv_acc"],
            "clean_acc_downstream": sum(r["clean_acc"] for r in down) / len(down),
            "adv_acc_downstream": sum(r["adv_acc"] for r in down) / len(down),
        })
    return {"schema_version": evaluation.SCHEMA_VERSION,
            "downstream_domains": downstream_ids, "methods": methods}


def _print_summary(summary: dict) -> None:
    print(f"{'method':<10} {'clean(down)':>12} {'adv(down)':>12} "
          f"{'clean(in)':>12} {'adv(in)':>12}")
    for row in summary["methods"]:
        print(f"{row['method']:<10} {row['clean_acc_downstream']:>12.4f} "
              f"{row['adv_acc_downstream']:>12.4f} "
              f"{row['clean_acc_in_domain']:>12.4f} {row['adv_acc_in_domain']:>12.4f}")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        for key, path in _dataset_paths(out_dir, cfg).items():
            print(f"would write {key} -> {path}")
        return 0
    manifest = _Manifest(cfg, out_dir)
    _run_gen_data(cfg, out_dir, manifest)
    manifest.phase("gen_data", 0.0)
    manifest.write("manifest_gen_data.json")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        print(f"would pretrain role={args.role} on {args.data} "
              f"-> {_ckpt_path(out_dir, 'vanilla' if args.role == 'vanilla_target' else 'proxy')}")
        return 0
    data = storage.load_dataset(args.data)
    manifest = _Manifest(cfg, out_dir)
    t0 = time.perf_counter()
    _run_pretrain(cfg, args.role, data, out_dir, manifest)
    manifest.phase(f"pretrain_{args.role}", time.perf_counter() - t0)
    manifest.write(f"manifest_pretrain_{args.role}.json")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        print(f"would finetune method={args.method} from {args.vanilla} "
              f"with proxy {args.proxy} on {args.data} "
              f"-> {_ckpt_path(out_dir, args.method)}")
        return 0
    vanilla = storage.load_checkpoint(args.vanilla)
    proxy = storage.load_checkpoint(args.proxy)
    data = storage.load_dataset(args.data)
    if vanilla.image_spec.input_dim != data.input_dim:
        raise ConfigError(f"checkpoint expects input_dim "
                          f"{vanilla.image_spec.input_dim}, dataset has {data.input_dim}")
    manifest = _Manifest(cfg, out_dir)
    t0 = time.perf_counter()
    _run_finetune(cfg, args.method, vanilla, proxy, data, out_dir, manifest)
    manifest.phase(f"finetune_{args.method}", time.perf_counter() - t0)
    manifest.write(f"manifest_finetune_{args.method}.json")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        print(f"would evaluate {args.ckpt} on {len(args.data)} dataset(s)")
        return 0
    model = storage.load_checkpoint(args.ckpt)
    name = Path(args.ckpt).stem
    datasets = [storage.load_dataset(p) for p in args.data]
    reports = _eval_model_on(model, datasets, cfg)
    rows = [(name, r) for r in reports]
    _json_dump({name: [r.to_dict() for r in reports]},
               out_dir / "reports" / f"eval_{name}.json")
    _write_text(_reports_csv(rows), out_dir / "reports" / f"eval_{name}.csv")
    for r in reports:
        print(f"{r.dataset_id}: clean {r.clean_acc:.4f}, adv {r.adv_acc:.4f} "
              f"({r.num_samples} samples)")
    return 0


def cmd_transfer_matrix(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        print(f"would build a {len(args.ckpts)}x{len(args.ckpts)} transfer matrix "
              f"on {args.data}")
        return 0
    models = [storage.load_checkpoint(p) for p in args.ckpts]
    ids = [Path(p).stem for p in args.ckpts]
    data = storage.load_dataset(args.data)
    tm = evaluation.transfer_matrix(models, data, cfg.eval_attack(), model_ids=ids)
    _json_dump(tm.to_dict(), out_dir / "reports" / "transfer_matrix.json")
    header = "forger:" + ",".join(tm.model_ids)
    print(header)
    for mid, row in zip(tm.model_ids, tm.matrix):
        print(mid + "," + ",".join(f"{v:.4f}" for v in row))
    return 0


def cmd_bound_check(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    if args.dry_run:
        print(f"would bound-check target={args.target} proxy={args.proxy} "
              f"on {args.data} with loss_kind={args.loss_kind}")
        return 0
    target = storage.load_checkpoint(args.target)
    proxy = storage.load_checkpoint(args.proxy)
    data = storage.load_dataset(args.data)
    rep = evaluation.bound_check(target, proxy, data, cfg.eval_attack(),
                                 loss_kind=args.loss_kind)
    _json_dump(rep.to_dict(), out_dir / "reports" / f"bound_{args.loss_kind}.json")
    print(f"lhs = {rep.lhs:.6f}")
    print(f"rhs_theorem1 = {rep.rhs_theorem1:.6f} (holds: {rep.holds_1})")
    print(f"rhs_theorem2 = {rep.rhs_theorem2:.6f} (holds: {rep.holds_2})")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    run_pipeline(cfg, Path(args.out), dry_run=args.dry_run)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to a key=value config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default="runs/out", help="output directory")
    common.add_argument("--dry-run", action="store_true",
                        help="print the plan without side effects")

    parser = argparse.ArgumentParser(
        prog="proxylab",
        description="Adversarial robustness transfer experiments on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate the synthetic multi-domain datasets")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common],
                       help="pretrain a stand-in model on clean data")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--role", choices=("vanilla_target", "proxy"), required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common],
                       help="fine-tune the target with one of the methods")
    p.add_argument("--method", choices=FINETUNE_METHODS, required=True)
    p.add_argument("--vanilla", required=True, help="pretrained target checkpoint")
    p.add_argument("--proxy", required=True, help="pretrained proxy checkpoint")
    p.add_argument("--data", required=True, help="training dataset file")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common],
                       help="clean and adversarial accuracy on datasets")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer-matrix", parents=[common],
                       help="cross-model adversarial transfer grid")
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_transfer_matrix)

    p = sub.add_parser("bound-check", parents=[common],
                       help="empirical risk-bound verification")
    p.add_argument("--target", required=True)
    p.add_argument("--proxy", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--loss-kind", choices=("l1_prob", "kl"), default="l1_prob")
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("pipeline", parents=[common],
                       help="run the full protocol end to end")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError, ShapeError, DomainError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProxylabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
