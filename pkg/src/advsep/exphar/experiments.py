"""Config-driven pipelines: generate -> attack -> certify/probe -> report.

Each replicate ``i`` uses seed ``base + i``; inside a replicate the PCG64
stream of that seed is split with ``spawn`` into independent children for
the network, the training data, the test data and any perturbation, so
adding a consumer never shifts another's draws.  Seeds may run in parallel
(``n_jobs``); rows are always aggregated in seed order.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .. import theory_checks as tc
from ..attack import AttackSpec, adversarial_examples, generate_noise_set, write_noise_csv
from ..exceptions import ExperimentError
from ..model import forward, init_network, two_cluster_dataset
from ..numerics import make_rng
from ..separability import (eval_probe, margin_report, margins, perceptron_decide, projected_witness,
                            theoretical_witness, train_probe)
from ..training import TrainConfig, gd_train, ntk_ball_perturbation
from .config import ExperimentConfig
from .ingest import ingest_noise_csv
from .report import ExperimentReport, aggregate, criterion, curve_filename, emit_report

_STREAMS = 4  # network, train data, test data, perturbation


def _streams(seed):
    return make_rng(seed).spawn(_STREAMS)


def _fraction(flags):
    flags = list(flags)
    return float(np.mean(flags)) if flags else 0.0


def _seed_curve(rows, key, label):
    return {"x_label": "seed", "y_label": label, "x": [r["seed"] for r in rows], "y": [r[key] for r in rows]}


def _agreement_row(ns, rep, max_epochs):
    dec = perceptron_decide(ns, max_epochs)
    return {
        "perceptron_separable": dec.separable,
        "perceptron_epochs": dec.epochs,
        "certificate_verified": bool(dec.separable and margins(ns, dec.witness).separable),
        # only sets the witness certifies are in scope for the agreement claim
        "agrees": bool(dec.separable) if rep.separable else True,
    }


def _maybe_save_noise(cfg, ns, seed, tag=""):
    if not (cfg.save_noise and cfg.output_dir):
        return {}
    path = Path(cfg.output_dir) / "noise" / f"seed{seed}{tag}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path, sidecar = write_noise_csv(ns, path)
    root = Path(cfg.output_dir)
    return {f"noise_seed{seed}{tag}": str(csv_path.relative_to(root)),
            f"noise_seed{seed}{tag}_sidecar": str(sidecar.relative_to(root))}


# -- per-seed pipelines -------------------------------------------------------


def _init_seed(cfg, seed):
    s_net, s_train, s_test, _ = _streams(seed)
    p = init_network(cfg.d, cfg.m, s_net)
    ds = two_cluster_dataset(cfg.n, cfg.d, cfg.separation, s_train)
    ns = generate_noise_set(p, ds, cfg.attack, seed)
    rep = margins(ns, theoretical_witness(p))
    stat = tc.margin_statistic(p, ds.X)
    row = {
        "seed": seed,
        "violations": rep.violations,
        "min_margin": rep.min_margin,
        "separable": rep.separable,
        "min_statistic": float(stat.min()),
        "statistic_above": bool(np.all(stat > cfg.criteria["margin_threshold"])),
        "mean_residual_factor": float(np.mean(ns.residual_factors)),
        **_agreement_row(ns, rep, cfg.perceptron_max_epochs),
    }
    if cfg.n_test:
        test = two_cluster_dataset(cfg.n_test, cfg.d, cfg.separation, s_test)
        ns_test = generate_noise_set(p, test, cfg.attack, seed)
        probe = train_probe(ns, 2, cfg.probe_max_iter)
        row["probe_train_accuracy"] = eval_probe(probe, ns)
        row["probe_test_accuracy"] = eval_probe(probe, ns_test)
    return row, ns.fingerprint, _maybe_save_noise(cfg, ns, seed)


def _init_summary(cfg, rows):
    c = cfg.criteria
    sep = [r for r in rows if r["separable"]]
    agg = aggregate(rows, ["violations", "min_margin", "min_statistic", "mean_residual_factor"])
    agg["separable_seed_fraction"] = _fraction(r["separable"] for r in rows)
    agg["statistic_seed_fraction"] = _fraction(r["statistic_above"] for r in sep)
    agg["agreement"] = _fraction(r["agrees"] for r in rows)
    crit = [
        criterion("separable_seed_fraction", agg["separable_seed_fraction"], c["separable_seed_fraction"], ">="),
        criterion("statistic_seed_fraction", agg["statistic_seed_fraction"], c["statistic_seed_fraction"], ">="),
        criterion("perceptron_agreement", agg["agreement"], c["agreement"], ">="),
    ]
    if cfg.n_test:
        ok = [r["probe_train_accuracy"] >= c["probe_train_accuracy"] and
              r["probe_test_accuracy"] >= c["probe_test_accuracy"] for r in rows]
        agg.update(aggregate(rows, ["probe_train_accuracy", "probe_test_accuracy"]))
        agg["probe_seed_fraction"] = _fraction(ok)
        crit.append(criterion("probe_seed_fraction", agg["probe_seed_fraction"], c["probe_seed_fraction"], ">="))
    return agg, crit, {"min_margin_by_seed": _seed_curve(rows, "min_margin", "min_margin")}


def _ntk_seed(cfg, seed):
    s_net, s_train, _, s_pert = _streams(seed)
    p0 = init_network(cfg.d, cfg.m, s_net)
    ds = two_cluster_dataset(cfg.n, cfg.d, cfg.separation, s_train)
    if cfg.perturbation_source == "train":
        p1 = gd_train(p0, ds, cfg.train)[-1].params
    else:
        scale = 1.0 / math.sqrt(cfg.m)
        p1 = ntk_ball_perturbation(p0, cfg.radius_w * scale, cfg.radius_a * scale, s_pert)
    ns = generate_noise_set(p1, ds, cfg.attack, seed)
    rep = margins(ns, theoretical_witness(p0))
    table = tc.ntk_expansion_table(p0, p1, ds.X)
    T = table["terms"]
    k = cfg.criteria["term_constant"]
    rel = np.abs(table["total"] - table["direct"]) / (1.0 + np.abs(table["direct"]))
    terms_ok = bool(np.all(T[0] > cfg.criteria["margin_threshold"]) and
                    np.all(np.abs(T[1]) <= k / math.sqrt(cfg.m)) and
                    np.all(np.abs(T[3]) <= k / math.sqrt(cfg.d)))
    row = {
        "seed": seed,
        "violations": rep.violations,
        "min_margin": rep.min_margin,
        "separable": rep.separable,
        "terms_ok": terms_ok,
        "min_leading_term": float(T[0].min()),
        "max_abs_term_2": float(np.abs(T[1]).max()),
        "max_abs_term_4": float(np.abs(T[3]).max()),
        "max_flips": int(table["flips"].max()),
        "dW_spectral": table["dW_spectral"],
        "da_norm": table["da_norm"],
        "max_identity_residual": float(rel.max()),
        **_agreement_row(ns, rep, cfg.perceptron_max_epochs),
    }
    return row, {**ns.fingerprint, "initial_network": p0.fingerprint()}, _maybe_save_noise(cfg, ns, seed)


def _ntk_summary(cfg, rows):
    c = cfg.criteria
    sep = [r for r in rows if r["separable"]]
    agg = aggregate(rows, ["violations", "min_margin", "min_leading_term", "max_abs_term_2", "max_abs_term_4",
                           "max_flips", "dW_spectral", "da_norm"])
    agg["separable_seed_fraction"] = _fraction(r["separable"] for r in rows)
    agg["term_seed_fraction"] = _fraction(r["terms_ok"] for r in sep)
    agg["agreement"] = _fraction(r["agrees"] for r in rows)
    agg["max_identity_residual"] = max((r["max_identity_residual"] for r in rows), default=0.0)
    crit = [
        criterion("separable_seed_fraction", agg["separable_seed_fraction"], c["separable_seed_fraction"], ">="),
        criterion("term_seed_fraction", agg["term_seed_fraction"], c["term_seed_fraction"], ">="),
        criterion("expansion_identity", agg["max_identity_residual"], c["identity_rtol"], "<="),
        criterion("perceptron_agreement", agg["agreement"], c["agreement"], ">="),
    ]
    return agg, crit, {"min_margin_by_seed": _seed_curve(rows, "min_margin", "min_margin")}


def _corollary_seed(cfg, seed):
    s_net, s_train, _, _ = _streams(seed)
    p = init_network(cfg.d, cfg.m, s_net)
    ds = two_cluster_dataset(cfg.n, cfg.d, cfg.separation, s_train)
    ns = generate_noise_set(p, ds, cfg.attack, seed)
    X_adv = adversarial_examples(ds.X, ns)
    w = projected_witness(p, ds.X)
    rep = margin_report(X_adv, ds.y, w)
    orth = np.abs(ds.X @ w.v) / (np.linalg.norm(w.v) * math.sqrt(cfg.d))
    row = {
        "seed": seed,
        "violations": rep.violations,
        "min_margin": rep.min_margin,
        "separable": rep.separable,
        "max_orthogonality": float(orth.max()),
    }
    return row, ns.fingerprint, _maybe_save_noise(cfg, ns, seed)


def _corollary_summary(cfg, rows):
    c = cfg.criteria
    agg = aggregate(rows, ["violations", "min_margin"])
    agg["separable_seed_fraction"] = _fraction(r["separable"] for r in rows)
    agg["max_orthogonality"] = max((r["max_orthogonality"] for r in rows), default=0.0)
    crit = [
        criterion("separable_seed_fraction", agg["separable_seed_fraction"], c["separable_seed_fraction"], ">="),
        criterion("orthogonality", agg["max_orthogonality"], c["orthogonality_tol"], "<="),
    ]
    return agg, crit, {"min_margin_by_seed": _seed_curve(rows, "min_margin", "min_margin")}


def _large_eta_spec(cfg):
    a = cfg.attack
    return AttackSpec(a.method, float(cfg.d) ** cfg.eta_exponent, a.steps, a.epsilon, a.norm, a.temperature)


def _large_eta_seed(cfg, seed):
    s_net, s_train, _, _ = _streams(seed)
    p = init_network(cfg.d, cfg.m, s_net)
    ds = two_cluster_dataset(cfg.n, cfg.d, cfg.separation, s_train)
    ns = generate_noise_set(p, ds, _large_eta_spec(cfg), seed)
    X_adv = adversarial_examples(ds.X, ns)
    rel = np.linalg.norm(X_adv - ds.X, axis=1) / np.linalg.norm(ds.X, axis=1)
    probe = train_probe((X_adv, ds.y), 2, cfg.probe_max_iter)
    row = {
        "seed": seed,
        "eta": ns.spec.eta,
        "median_relative_perturbation": float(np.median(rel)),
        "probe_train_accuracy": eval_probe(probe, (X_adv, ds.y)),
        "witness_accuracy": float(np.mean(margin_report(X_adv, ds.y, theoretical_witness(p)).margins > 0)),
    }
    return row, ns.fingerprint, _maybe_save_noise(cfg, ns, seed)


def _large_eta_summary(cfg, rows):
    c = cfg.criteria
    bound = c["perturbation_constant"] * float(cfg.d) ** -0.25
    agg = aggregate(rows, ["median_relative_perturbation", "probe_train_accuracy", "witness_accuracy"])
    agg["worst_median_relative_perturbation"] = max((r["median_relative_perturbation"] for r in rows), default=0.0)
    agg["worst_probe_train_accuracy"] = min((r["probe_train_accuracy"] for r in rows), default=0.0)
    agg["perturbation_bound"] = bound
    crit = [
        criterion("median_relative_perturbation", agg["worst_median_relative_perturbation"], bound, "<="),
        criterion("probe_train_accuracy", agg["worst_probe_train_accuracy"], c["probe_train_accuracy"], ">="),
    ]
    return agg, crit, {}


def _train_seed(cfg, seed):
    s_net, s_train, s_test, _ = _streams(seed)
    p0 = init_network(cfg.d, cfg.m, s_net)
    ds = two_cluster_dataset(cfg.n, cfg.d, cfg.separation, s_train)
    test = two_cluster_dataset(cfg.n_test, cfg.d, cfg.separation, s_test) if cfg.n_test else None
    raw_probe = train_probe((ds.X, ds.y), 2, cfg.probe_max_iter)
    row = {"seed": seed, "raw_train_accuracy": eval_probe(raw_probe, (ds.X, ds.y))}
    if test is not None:
        row["raw_test_accuracy"] = eval_probe(raw_probe, (test.X, test.y))
    attacks = [("primary", cfg.attack), *cfg.attacks]
    series = {}
    for lr in cfg.learning_rates:
        t = cfg.train
        snaps = gd_train(p0, ds, TrainConfig(lr, t.steps, t.snapshot_every, t.layers, t.temperature, seed))
        steps, acc, test_acc, model_acc = [], [], [], []
        for snap in snaps:
            ns = generate_noise_set(snap.params, ds, cfg.attack, seed)
            probe = train_probe(ns, 2, cfg.probe_max_iter)
            steps.append(snap.step)
            acc.append(eval_probe(probe, ns))
            model_acc.append(float(np.mean(np.sign(forward(snap.params, ds.X)) == ds.y)))
            if test is not None:
                test_acc.append(eval_probe(probe, generate_noise_set(snap.params, test, cfg.attack, seed)))
        series[lr] = {"step": steps, "probe_train": acc, "probe_test": test_acc, "model_train": model_acc}
        final = snaps[-1].params
        row[f"lr{lr:g}_final_loss"] = snaps[-1].loss
        row[f"lr{lr:g}_dW_spectral"] = snaps[-1].dW_spectral
        for name, spec in attacks:
            ns = generate_noise_set(final, ds, spec, seed)
            row[f"lr{lr:g}_{name}_probe_train_accuracy"] = eval_probe(train_probe(ns, 2, cfg.probe_max_iter), ns)
    return row, {"seed": seed, "network": p0.fingerprint()}, {}, series


def _train_summary(cfg, rows, series):
    c = cfg.criteria
    names = ["primary", *(name for name, _ in cfg.attacks)]
    keys = [k for k in (rows[0] if rows else {}) if k != "seed"]
    agg = aggregate(rows, keys)
    crit = []
    if len(cfg.learning_rates) >= 2:
        small, large = min(cfg.learning_rates), max(cfg.learning_rates)
        order = [r[f"lr{small:g}_primary_probe_train_accuracy"] >= r[f"lr{large:g}_primary_probe_train_accuracy"]
                 for r in rows]
        agg["lr_order_fraction"] = _fraction(order)
        crit.append(criterion("lr_order_fraction", agg["lr_order_fraction"], c["lr_order_fraction"], ">="))
    for lr in cfg.learning_rates:
        for name in names:
            key = f"lr{lr:g}_{name}_probe_train_accuracy"
            frac = _fraction(r[key] >= r["raw_train_accuracy"] for r in rows)
            agg[f"noise_vs_raw_fraction_lr{lr:g}_{name}"] = frac
            crit.append(criterion(f"noise_vs_raw_lr{lr:g}_{name}", frac, c["noise_vs_raw_fraction"], ">="))
    curves = {}
    for lr in cfg.learning_rates:
        per_seed = [s[lr] for s in series]
        if not per_seed:
            continue
        steps = per_seed[0]["step"]
        for metric in ("probe_train", "probe_test", "model_train"):
            if not per_seed[0][metric]:
                continue
            mean = np.mean([s[metric] for s in per_seed], axis=0)
            curves[f"lr{lr:g}_{metric}_accuracy"] = {"x_label": "step", "y_label": f"{metric}_accuracy",
                                                    "x": list(steps), "y": [float(v) for v in mean]}
    return agg, crit, curves


_PIPELINES = {
    "init_separability": (_init_seed, _init_summary),
    "ntk_separability": (_ntk_seed, _ntk_summary),
    "corollary_adv_examples": (_corollary_seed, _corollary_summary),
    "large_eta": (_large_eta_seed, _large_eta_summary),
}


# -- whole-run pipelines ------------------------------------------------------


def _run_theory_check(entry, seed_base):
    name = entry["check"]
    tb = tc.TrialBatch(entry["d"], entry.get("m", 1), entry["trials"], entry.get("base_seed", seed_base),
                       entry.get("constants", {}))
    sampler = entry.get("sampler")
    if name == "moments":
        return list(tc.mc_independent_moments(tb, sampler or "full"))
    if name == "split_residual":
        rng = tb.rng()
        worst = 0.0
        for _ in range(tb.trials):
            s_net, s_x = rng.spawn(2)
            p = init_network(tb.d, tb.m, s_net)
            x = s_x.standard_normal(tb.d)
            x *= math.sqrt(tb.d) / np.linalg.norm(x)
            _, _, direct = tc.conditioning_split(p, x)
            worst = max(worst, tc.conditioning_split_residual(p, x) / (1.0 + abs(direct)))
        return [tc.CheckResult("conditioning_split_residual", worst, 1e-9, "identity", bool(worst <= 1e-9),
                               tb.trials, 0.0, 0.0, {"d": tb.d, "m": tb.m})]
    if name == "h_norm":
        return [tc.check_h_norm_tail(tb, sampler=sampler or "reduced")]
    if name == "inner_product":
        return list(tc.check_inner_product_tail(tb, sampler=sampler or "reduced"))
    if name == "margin_threshold":
        return [tc.check_margin_threshold(tb, identity_D=bool(entry.get("identity_D", False)))]
    if name == "subexp":
        return list(tc.check_subexp_sum_tail(tb, sampler or "full"))
    if name == "sparse_vector":
        return [tc.check_sparse_vector_bound(tb, entry["sparsity"], sampler or "reduced")]
    if name == "chi_square":
        return [tc.check_chi_square_tail(tb, entry["z"], entry["side"])]
    raise ValueError(f"unknown theory check {name!r}")


def _theory_suite(cfg):
    checks, crit = [], []
    for i, entry in enumerate(cfg.theory_checks):
        try:
            results = _run_theory_check(entry, cfg.seed_base)
        except Exception as exc:
            raise ExperimentError(cfg.seed_base, f"theory check {i} ({entry['check']}): {exc}") from exc
        for res in results:
            d = res.to_dict()
            d["d"], d["m"] = entry["d"], entry.get("m")
            checks.append(d)
            if res.passed is not None:
                label = f"{res.name}[d={entry['d']}" + (f",m={entry['m']}]" if "m" in entry else "]")
                crit.append({"name": label, "value": float(res.empirical), "threshold": float(res.target),
                             "comparator": res.kind, "passed": bool(res.passed)})
    agg = {"n_checks": len(checks), "n_failed": sum(not c["passed"] for c in crit)}
    return checks, agg, crit


def _ingest(cfg):
    spec = cfg.ingest
    ns = ingest_noise_csv(spec["path"], spec.get("expected_dim"))
    classes = spec.get("classes")
    binary = bool(np.all(np.isin(ns.y, (-1, 1))))
    if classes is None:
        classes = 2 if binary else int(ns.y.max()) + 1
    rng = make_rng(cfg.seed_base)
    perm = rng.permutation(len(ns))
    n_test = int(round(spec["test_fraction"] * len(ns)))
    if n_test < 1 or n_test >= len(ns):
        raise ExperimentError(cfg.seed_base, f"test fraction leaves an empty split for n={len(ns)}")
    train, test = ns.subset(np.sort(perm[n_test:])), ns.subset(np.sort(perm[:n_test]))
    probe = train_probe(train, classes, cfg.probe_max_iter)
    row = {
        "seed": cfg.seed_base,
        "n_train": len(train),
        "n_test": len(test),
        "d": ns.d,
        "classes": classes,
        "probe_train_accuracy": eval_probe(probe, train),
        "probe_test_accuracy": eval_probe(probe, test),
        "probe_iterations": probe.n_iter_,
    }
    return row, ns.fingerprint


def _guarded(fn, cfg, seed):
    try:
        return fn(cfg, seed)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(seed, f"{type(exc).__name__}: {exc}") from exc


def _map_seeds(fn, cfg):
    if cfg.n_jobs == 1 or cfg.seed_count == 1:
        return [_guarded(fn, cfg, s) for s in cfg.seeds]
    return Parallel(n_jobs=cfg.n_jobs)(delayed(_guarded)(fn, cfg, s) for s in cfg.seeds)


def run_experiment(cfg, out_dir=None, timestamp=None, write=True):
    """Execute ``cfg`` and return its report.

    When ``out_dir`` (or ``cfg.output_dir``) is set and ``write`` is true, the
    report is also written there in ``cfg.formats``.  ``timestamp`` overrides
    the ``created`` field, which is the only run-dependent entry.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    if out_dir is not None and cfg.output_dir != str(out_dir):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "output": {**cfg.to_dict()["output"], "dir": str(out_dir)}})
    report = ExperimentReport(kind=cfg.kind, config=cfg.to_dict())
    if cfg.kind == "theory_suite":
        report.checks, report.aggregates, report.criteria = _theory_suite(cfg)
    elif cfg.kind == "ingest_and_probe":
        try:
            row, fp = _ingest(cfg)
        except ExperimentError:
            raise
        except Exception as exc:
            raise ExperimentError(cfg.seed_base, f"{type(exc).__name__}: {exc}") from exc
        report.per_seed = [row]
        report.fingerprints = [fp]
        report.aggregates = aggregate([row], ["probe_train_accuracy", "probe_test_accuracy"])
    elif cfg.kind == "train_and_probe":
        results = _map_seeds(_train_seed, cfg)
        rows = [r[0] for r in results]
        report.per_seed = rows
        report.fingerprints = [r[1] for r in results]
        report.aggregates, report.criteria, report.curves = _train_summary(cfg, rows, [r[3] for r in results])
    else:
        seed_fn, summary_fn = _PIPELINES[cfg.kind]
        results = _map_seeds(seed_fn, cfg)
        rows = [r[0] for r in results]
        report.per_seed = rows
        report.fingerprints = [r[1] for r in results]
        for r in results:
            report.artifacts.update(r[2])
        report.aggregates, report.criteria, report.curves = summary_fn(cfg, rows)
    report.created = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    if out_dir is not None and write:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.yaml").write_text(cfg.to_yaml())
        report.artifacts["config"] = "config.yaml"
        for fmt in cfg.formats:
            names = {"json": ["report.json"], "csv": ["report.csv", "per_seed.csv", "criteria.csv"]}.get(fmt, [])
            for name in names:
                report.artifacts[f"{fmt}:{name}"] = name
        if "csv" in cfg.formats and report.checks:
            report.artifacts["csv:checks.csv"] = "checks.csv"
        if "plotdata" in cfg.formats:
            for name in report.curves:
                report.artifacts[f"plotdata:{name}"] = curve_filename(name)
        emit_report(report, cfg.formats, out_dir)
    return report
