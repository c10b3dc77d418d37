"""Command-line entry point: synth, train, predict, eval and sweep."""
import argparse
import csv
import logging
import sys
import time

from . import io
from .errors import InputError, NumericalError, VgpmilError
from .predict import DEFAULT_POINTS, DEFAULT_RANDOMIZATIONS, evaluate, predict_dataset
from .synth import generate_synthetic, load_spec
from .vi import FitConfig, fit

log = logging.getLogger("vgpmil")

REPORT_COLUMNS = [
    "lambda", "inst_acc", "inst_prec", "inst_rec", "inst_f1",
    "bag_acc", "bag_prec", "bag_rec", "bag_f1", "bag_variability", "train_seconds",
]
CONFUSION_COLUMNS = [f"{p}_{n}" for p in ("inst", "bag") for n in ("tn", "fp", "fn", "tp")]
PREDICT_COLUMNS = ["bag_id", "instance_id", "instance_prob", "bag_prob", "bag_prob_se"]
DEFAULT_LAMBDAS = "0,0.1,0.5,1,5,10"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message, component="data-cli")


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _report_row(lam, report, seconds=""):
    row = {"lambda": float(lam), "train_seconds": seconds}
    row.update(report.as_row())
    row.update(report.confusion_row())
    return row


def _fit_config(args, lam):
    return FitConfig(lam=lam, n_inducing=args.inducing, n_iter=args.iters, seed=args.seed,
                     neighborhood=args.neighborhood)


def cmd_synth(args):
    ds = generate_synthetic(load_spec(args.spec))
    io.save_dataset(ds, args.out)
    log.info("wrote %d bags / %d instances to %s", len(ds.bags), ds.n_instances, args.out)


def cmd_train(args):
    ds = io.load_dataset(args.data)
    model = fit(ds, _fit_config(args, args.lam))
    io.save_model(model, args.out)
    log.info("saved model (M=%d, lambda=%g) to %s", model.n_inducing, model.lam, args.out)


def cmd_predict(args):
    model = io.load_model(args.model)
    ds = io.load_dataset(args.data)
    preds = predict_dataset(model, ds, n_points=args.points, n_random=args.randomizations)
    rows = []
    for bag, pred in zip(ds.bags, preds):
        for iid, p in zip(bag.instance_ids, pred.instance_probs):
            rows.append({"bag_id": bag.bag_id, "instance_id": iid, "instance_prob": float(p),
                         "bag_prob": float(pred.bag_prob), "bag_prob_se": float(pred.bag_prob_se)})
    _write_csv(args.out, PREDICT_COLUMNS, rows)


def cmd_eval(args):
    model = io.load_model(args.model)
    ds = io.load_dataset(args.data)
    report = evaluate(model, ds, threshold=args.threshold,
                      n_points=args.points, n_random=args.randomizations)
    _write_csv(args.report, REPORT_COLUMNS + CONFUSION_COLUMNS, [_report_row(model.lam, report)])


def cmd_sweep(args):
    train = io.load_dataset(args.data)
    test = io.load_dataset(args.test) if args.test else train
    try:
        lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad --lambdas value {args.lambdas!r}", component="data-cli") from None
    rows = []
    for lam in lambdas:
        t0 = time.perf_counter()
        model = fit(train, _fit_config(args, lam))
        seconds = time.perf_counter() - t0
        report = evaluate(model, test, threshold=args.threshold,
                          n_points=args.points, n_random=args.randomizations)
        rows.append(_report_row(lam, report, seconds))
        log.info("lambda=%g done in %.1fs", lam, seconds)
    _write_csv(args.report, REPORT_COLUMNS + CONFUSION_COLUMNS, rows)


def _add_fit_args(p):
    p.add_argument("--inducing", type=int, default=200, help="number of inducing points M")
    p.add_argument("--iters", type=int, default=200, help="number of VI iterations T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neighborhood", type=int, choices=(4, 8), default=4)


def _add_predict_args(p):
    p.add_argument("--points", type=int, default=DEFAULT_POINTS,
                   help="QMC lattice points per randomization for bag probabilities")
    p.add_argument("--randomizations", type=int, default=DEFAULT_RANDOMIZATIONS)


def build_parser():
    parser = _Parser(prog="vgpmil", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON file with SyntheticSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    _add_fit_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="instance and bag probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_predict_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_predict_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over a lambda grid")
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="evaluation dataset (defaults to --data)")
    p.add_argument("--lambdas", default=DEFAULT_LAMBDAS)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_fit_args(p)
    _add_predict_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except VgpmilError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [data-cli] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
