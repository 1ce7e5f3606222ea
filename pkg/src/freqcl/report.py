"""Writers for run outputs: metrics.csv, curves.csv, summary.json and the
echoed config."""

import csv
import json
import os

from .config import format_config

METRICS_HEADER = ("after_task", "eval_task", "class_il_acc", "task_il_acc")
CURVES_HEADER = ("task", "epoch", "loss")


def emit_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "curves": os.path.join(out_dir, "curves.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "config": os.path.join(out_dir, "config.txt"),
    }
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for (t, tau, acc), (_, _, tacc) in zip(report.class_il.lower_triangle(), report.task_il.lower_triangle()):
            w.writerow((t + 1, tau + 1, repr(acc), repr(tacc)))
    with open(paths["curves"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVES_HEADER)
        for task, epoch, loss in report.curves:
            w.writerow((task + 1, epoch + 1, repr(float(loss))))
    with open(paths["summary"], "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["config"], "w") as fh:
        fh.write(format_config(report.config))
    return paths


def emit_ablation(reports, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("name", "variant", "scaling_mode", "selection", "acc_class_il", "acc_task_il",
                    "forgetting_class_il", "params_backbone", "flops_train"))
        for name, rep in reports.items():
            s = rep.summary()
            cfg = rep.config
            w.writerow((name, cfg.variant.value, cfg.backbone.scaling_mode.value, cfg.selection.value,
                        repr(s["acc_class_il"]), repr(s["acc_task_il"]), repr(s["forgetting_class_il"]),
                        s["params_backbone"], s["flops_train"]))
            emit_report(rep, os.path.join(out_dir, name.replace("=", "-")))
    return path
