"""Command-line surface: phantom, train, infer, quantify, evaluate,
gradcheck, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from . import report as report_mod
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .inference import predict_volume, save_probabilities
from .metrics import mean_foreground_dice
from .models import ArchitectureSpec
from .phantom import PhantomSpec, generate_phantom, sparsify_annotation
from .quantify import quantify, report_from_counts
from .trainer import TrainConfig, load_cases, train_ensemble
from .volume import Spacing, load_volume, save_volume


def _fmt_float(v) -> str:
    return repr(float(v))


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = PhantomSpec(
            seed=args.seed + i,
            nz=args.nz,
            size=args.size,
            noise_sigma_hu=args.noise,
            thoracic_cap=args.thoracic_cap,
        )
        hu, labels, analytic = generate_phantom(spec)
        if args.annotation_period > 1:
            labels = sparsify_annotation(labels, args.annotation_period)
        case = f"case_{i:03d}"
        save_volume(hu, out / f"{case}_hu.vbc")
        save_volume(labels, out / f"{case}_label.vbc")
        report_mod.emit_json(analytic, out / f"{case}_analytic.json")
        print(f"wrote {case} (nz={spec.nz}, size={spec.size}, seed={spec.seed})")
    return 0


def cmd_train(args) -> int:
    if args.config:
        cfg = TrainConfig.from_json(args.config)
    else:
        cfg = TrainConfig()
    if args.arch:
        cfg.arch = ArchitectureSpec(args.arch, nf=args.nf or cfg.arch.nf, levels=args.levels or cfg.arch.levels)
    if args.epochs:
        cfg.epochs = args.epochs
    if args.folds:
        cfg.folds = args.folds
    if args.seed is not None:
        cfg.seed = args.seed
    cases = load_cases(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_json(out / "config.json")
    checkpoints = train_ensemble(cfg, cases)
    for ckpt in checkpoints:
        path = out / f"fold_{ckpt.fold_index}.ckpt"
        save_checkpoint(ckpt, path)
        _write_curve(ckpt.curve, out / f"fold_{ckpt.fold_index}_curve.csv")
        print(f"fold {ckpt.fold_index}: best val dice {ckpt.val_dice:.4f} at epoch {ckpt.epoch}")
    return 0


def _write_curve(curve, path) -> None:
    header = "epoch,lr,loss,dice_ac,dice_b,dice_m,dice_st,dice_tc,dice_mean"
    lines = [header]
    for row in curve:
        cells = [str(row["epoch"]), _fmt_float(row["lr"])]
        cells.append("" if row.get("loss") is None else _fmt_float(row["loss"]))
        dice = row.get("val_dice")
        cells += [""] * 6 if dice is None else [_fmt_float(v) for v in dice]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _load_models(ckpt_dir):
    paths = sorted(Path(ckpt_dir).glob("*.ckpt"))
    if not paths:
        raise FileNotFoundError(f"no .ckpt files in {ckpt_dir}")
    ckpts = [load_checkpoint(p) for p in paths]
    return ckpts, [model_from_checkpoint(c) for c in ckpts]


def cmd_infer(args) -> int:
    ckpts, models = _load_models(args.checkpoints)
    cfg = ckpts[0].config
    hu = load_volume(getattr(args, "in"))
    probs, labels = predict_volume(
        models,
        hu,
        windows=cfg.get("windows", "multi"),
        downscale=int(cfg.get("downscale", 2)),
        window=int(cfg.get("crop", [32])[0]),
        overlap=float(cfg.get("overlap", 0.75)),
        weighting=args.weighting,
    )
    save_volume(labels, args.out)
    if args.probs:
        save_probabilities(probs, args.probs)
    print(f"wrote {args.out} from an ensemble of {len(models)}")
    return 0


def cmd_quantify(args) -> int:
    hu = load_volume(args.hu)
    labels = load_volume(args.labels)
    rep = quantify(hu, labels, metadata={"source_id": Path(args.hu).stem})
    paths = report_mod.emit_all(rep, args.out)
    print(
        f"SAT {rep.total_sat_ml:.1f} ml, VAT {rep.total_vat_ml:.1f} ml, "
        f"muscle {rep.total_muscle_ml:.1f} ml -> {paths['csv'].parent}"
    )
    return 0


def cmd_evaluate(args) -> int:
    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    result = mean_foreground_dice(pred.data, gt.data)
    header = "ac,b,m,st,tc,average"
    row = ",".join(f"{v:.4f}" for v in result.report_row())
    print(header)
    print(row)
    if args.out:
        Path(args.out).write_text(header + "\n" + row + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_mod.run_all(include_end_to_end=not args.quick)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:28s} max_rel_err={r.max_rel_error:.3e} tol={r.tolerance:.0e} {status}")
        if not r.passed:
            failed += 1
            print(f"    worst element: {r.worst_tensor}[{r.worst_index}]")
    return 1 if failed else 0


def cmd_report(args) -> int:
    data = json.loads(Path(getattr(args, "in")).read_text())
    counts = np.array(
        [[s["sat_voxels"], s["vat_voxels"], s["muscle_voxels"]] for s in data["slices"]],
        dtype=np.int64,
    )
    meta = dict(data.get("metadata", {}))
    spacing = Spacing(*meta.pop("spacing_mm"))
    meta.pop("voxel_volume_ml", None)
    rep = report_from_counts(counts, spacing, meta)
    paths = report_mod.emit_all(rep, args.out)
    print(f"re-rendered report into {paths['csv'].parent}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbc", description=__doc__)
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate synthetic phantom cases")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--nz", type=int, default=40)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--noise", type=float, default=20.0)
    sp.add_argument("--thoracic-cap", type=int, default=6)
    sp.add_argument(
        "--annotation-period", type=int, default=1, help=">1 keeps only every n-th slice annotated"
    )
    sp.set_defaults(func=cmd_phantom)

    st = sub.add_parser("train", help="train a cross-validation ensemble")
    st.add_argument("--config", help="TrainConfig JSON")
    st.add_argument("--data", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--arch", choices=["unet3d", "multires"], default=None)
    st.add_argument("--nf", type=int, default=None)
    st.add_argument("--levels", type=int, default=None)
    st.add_argument("--epochs", type=int, default=None)
    st.add_argument("--folds", type=int, default=None)
    st.set_defaults(func=cmd_train)

    si = sub.add_parser("infer", help="ensemble sliding-window inference")
    si.add_argument("--checkpoints", required=True)
    si.add_argument("--in", required=True)
    si.add_argument("--out", required=True)
    si.add_argument("--probs", default=None, help="optional raw probability dump")
    si.add_argument("--weighting", choices=["tent", "gauss"], default="tent")
    si.set_defaults(func=cmd_infer)

    sq = sub.add_parser("quantify", help="SAT/VAT/muscle volumes from HU + labels")
    sq.add_argument("--hu", required=True)
    sq.add_argument("--labels", required=True)
    sq.add_argument("--out", required=True)
    sq.set_defaults(func=cmd_quantify)

    se = sub.add_parser("evaluate", help="per-class dice of predicted vs reference labels")
    se.add_argument("--pred", required=True)
    se.add_argument("--gt", required=True)
    se.add_argument("--out", default=None)
    se.set_defaults(func=cmd_evaluate)

    sg = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sg.add_argument("--quick", action="store_true", help="skip the end-to-end network checks")
    sg.set_defaults(func=cmd_gradcheck)

    sr = sub.add_parser("report", help="re-render CSV/SVG from a report JSON")
    sr.add_argument("--in", required=True)
    sr.add_argument("--out", required=True)
    sr.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
