"""Command-line surface.

Subcommands: train-classifier, adv-train, train-ebm, sample-victim, attack,
grid, pgd-baseline, eval, selftest.  Every subcommand takes --config, --seed,
--out and --threads; outputs are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data, dataio, imggrid, nets, pipeline, runconfig, samplers
from .augment import TransformFamily
from .classifiers import (PgdSettings, accuracy, fit_classifier, predict_logits,
                          robust_accuracy)
from .ebm import EbmTrainConfig, energy_values, train_single_image_ebm
from .pipeline import AttackModels


def _common(sub):
    sub.add_argument("--config", default=None, help="TOML run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override the subcommand seed")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--threads", type=int, default=1, help="worker threads for chain chunks")


def _load_cfg(args):
    cfg = runconfig.load(args.config) if args.config else runconfig.default_config()
    os.makedirs(args.out, exist_ok=True)
    return cfg


def _dataset(cfg):
    X, y = data.load_dataset(cfg["data"]["images"], cfg["data"]["labels"] or None)
    return data.train_test_split(X, y, test_fraction=cfg["data"]["test_fraction"],
                                 seed=cfg["data"]["split_seed"])


def _subset(X, y, k):
    return (X, y) if not k else (X[:k], y[:k])


def _train_role(cfg, role, seed, adversarial=False):
    Xtr, ytr, Xte, yte = _dataset(cfg)
    section = "victim" if role == "victim" else role
    body = cfg[section]
    Xtr, ytr = _subset(Xtr, ytr, body["subset"])
    if role in ("aux", "surrogate") and body["augment_copies"] > 0:
        fam = runconfig.family_from(cfg)
        Xtr, ytr = data.augmented_training_set(Xtr, ytr, fam, body["augment_copies"],
                                               seed=(seed if seed is not None else body["seed"]))
    tc = runconfig.train_config_from(cfg, section, seed_override=seed)
    adv = runconfig.pgd_from(cfg, "victim") if adversarial else None
    if adversarial and adv.eps <= 0:
        adv = PgdSettings(warmup_frac=cfg["victim"]["adv_warmup_frac"])
    params, _ = fit_classifier(Xtr, ytr, tc, adv=adv)
    return params, (Xtr, ytr, Xte, yte)


def cmd_train_classifier(args) -> int:
    cfg = _load_cfg(args)
    params, (Xtr, ytr, Xte, yte) = _train_role(cfg, args.role, args.seed)
    name = {"victim": "victim", "aux": "aux", "surrogate": "surrogate"}[args.role]
    path = os.path.join(args.out, f"{name}.ckpt")
    dataio.save_checkpoint(path, params)
    print(f"saved {path}  train_acc={accuracy(params, Xtr[:1000], ytr[:1000]):.4f} "
          f"test_acc={accuracy(params, Xte, yte):.4f}")
    return 0


def cmd_adv_train(args) -> int:
    cfg = _load_cfg(args)
    params, (Xtr, ytr, Xte, yte) = _train_role(cfg, "victim", args.seed, adversarial=True)
    path = os.path.join(args.out, "victim-robust.ckpt")
    dataio.save_checkpoint(path, params)
    pgd = runconfig.pgd_from(cfg, "victim")
    if pgd.eps <= 0:
        pgd = PgdSettings()
    n = min(200, len(Xte))
    print(f"saved {path}  clean_acc={accuracy(params, Xte, yte):.4f} "
          f"robust_acc={robust_accuracy(params, Xte[:n], yte[:n], pgd):.4f}")
    return 0


def _load_ckpt(path, template):
    return dataio.load_params(path, template)


def _victim_template(n_classes=10):
    return nets.init_classifier(np.random.default_rng(0), n_classes=n_classes)


def _pick_sources(cfg, Xte, yte):
    return data.class_exemplars(Xte, yte, seed=cfg["grid"]["sources_seed"])


def cmd_train_ebm(args) -> int:
    cfg = _load_cfg(args)
    Xtr, ytr, Xte, yte = _dataset(cfg)
    sources, labels = _pick_sources(cfg, Xte, yte)
    x_ori = sources[labels.tolist().index(args.source_class)]
    fam = runconfig.family_from(cfg)
    ecfg = runconfig.ebm_config_from(cfg, seed_override=args.seed)
    params, history = train_single_image_ebm(x_ori, fam, ecfg)
    path = os.path.join(args.out, f"ebm-{args.source_class}.ckpt")
    dataio.save_checkpoint(path, params)
    curve = os.path.join(args.out, f"ebm-{args.source_class}-curve.csv")
    with open(curve, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "pos_energy", "neg_energy"])
        writer.writerows(history)
    gap = [ne - pe for _, pe, ne in history[-max(1, len(history) // 10):]]
    print(f"saved {path} and {curve}  final_gap={float(np.mean(gap)):.4f}")
    return 0


def cmd_sample_victim(args) -> int:
    cfg = _load_cfg(args)
    victim = _load_ckpt(args.victim, _victim_template())
    acfg = runconfig.attack_config_from(cfg, seed_override=args.seed, n_threads=args.threads)
    spec = samplers.AdvEnergySpec(c1=0.0, c2=acfg.c2, distance="l2sq",
                                  objective=acfg.objective,
                                  x_ori=np.zeros((1, 28, 28), dtype=np.float32),
                                  y_tar=args.target, victim_params=victim,
                                  c_pe=acfg.c_pe, c_je=acfg.c_je)
    energy = samplers.AdversarialEnergy(spec)
    scfg = samplers.SamplerConfig(step_size=acfg.step_size, n_steps=acfg.n_steps,
                                  init="uniform", seed=acfg.seed, box=(0.0, 1.0),
                                  per_chain_rng=True)
    res = samplers.psgla(energy, scfg, shape=(args.count, 1, 28, 28))
    logits = predict_logits(victim, res.final)
    probs = pipeline._victim_softmax(logits)[:, args.target]
    flags = logits.argmax(axis=1) == args.target
    path = imggrid.emit_grid(res.final, cols=6, border_flags=flags,
                             path=os.path.join(args.out, f"pvic-{args.target}.png"))
    print(f"wrote {path}  deceive_rate={flags.mean():.3f} "
          f"mean_target_softmax={probs.mean():.4f}")
    return 0


def _ebm_trainer(cfg, args):
    fam = runconfig.family_from(cfg)
    ecfg = runconfig.ebm_config_from(cfg)

    def train(x_ori):
        params, _ = train_single_image_ebm(x_ori, fam, ecfg)
        return params

    return train


def _write_report(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    Xtr, ytr, Xte, yte = _dataset(cfg)
    sources, labels = _pick_sources(cfg, Xte, yte)
    x_ori = sources[labels.tolist().index(args.source_class)]
    victim = _load_ckpt(args.victim, _victim_template())
    aux = _load_ckpt(args.aux, _victim_template())
    ebm = None
    if args.ebm:
        ebm = _load_ckpt(args.ebm, nets.init_energy_net(np.random.default_rng(0)))
    acfg = runconfig.attack_config_from(cfg, seed_override=args.seed, n_threads=args.threads)
    models = AttackModels(victim=victim, aux=aux, ebm=ebm)
    report = pipeline.run_attack(x_ori, args.source_class, args.target, models, acfg,
                                 ebm_trainer=_ebm_trainer(cfg, args))
    tag = f"{args.source_class}-to-{args.target}"
    _write_report(os.path.join(args.out, f"attack-{tag}.jsonl"), [report.summary()])
    if report.refined:
        imgs = np.stack([r.image for r in report.refined])
        dataio.save_tensor(os.path.join(args.out, f"refined-{tag}.saet"), imgs)
        imggrid.emit_grid(imgs, cols=10, border_flags=[True] * len(imgs),
                          path=os.path.join(args.out, f"refined-{tag}.png"))
    print(f"pair {tag}: accepted={report.diagnostics['n_accepted']} "
          f"refined={len(report.refined)}")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_cfg(args)
    Xtr, ytr, Xte, yte = _dataset(cfg)
    sources, labels = _pick_sources(cfg, Xte, yte)
    if args.classes:
        chosen = [int(c) for c in args.classes.split(",")]
        keep = [i for i, c in enumerate(labels) if c in chosen]
        sources, labels = sources[keep], labels[keep]
    targets = sorted({int(c) for c in labels}) if cfg["grid"]["targets"] == "all" else \
        [int(c) for c in cfg["grid"]["targets"].split(",")]
    victim = _load_ckpt(args.victim, _victim_template())
    aux = _load_ckpt(args.aux, _victim_template())
    surrogate = _load_ckpt(args.surrogate, _victim_template())
    acfg = runconfig.attack_config_from(cfg, seed_override=args.seed, n_threads=args.threads)
    models = AttackModels(victim=victim, aux=aux)
    rows = []

    def on_pair(i, y_ori, y_tar, rate, report):
        tag = f"{y_ori}-to-{y_tar}"
        rows.append(dict(report.summary(), surrogate_success_rate=rate))
        if report.refined:
            imgs = np.stack([r.image for r in report.refined])
            dataio.save_tensor(os.path.join(args.out, f"refined-{tag}.saet"), imgs)
            imggrid.emit_grid(imgs, cols=10, border_flags=[True] * len(imgs),
                              path=os.path.join(args.out, f"grid-{tag}.png"))
        print(f"pair {tag}: rate={rate:.3f} accepted={report.diagnostics['n_accepted']}")

    rates, _ = pipeline.attack_grid(sources, labels, targets, models, acfg, surrogate,
                                    ebm_trainer=_ebm_trainer(cfg, args), ebm_cache={},
                                    pair_callback=on_pair)
    matrix = os.path.join(args.out, "success-matrix.csv")
    with open(matrix, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source"] + [f"target_{t}" for t in targets])
        for cls, row in zip(labels, rates):
            writer.writerow([cls] + ["" if np.isnan(v) else f"{v:.4f}" for v in row])
    _write_report(os.path.join(args.out, "grid-report.jsonl"), rows)
    filled = rates[~np.isnan(rates)]
    print(f"wrote {matrix}  mean_rate={filled.mean():.4f} over {filled.size} pairs")
    return 0


def cmd_pgd_baseline(args) -> int:
    cfg = _load_cfg(args)
    Xtr, ytr, Xte, yte = _dataset(cfg)
    sources, labels = _pick_sources(cfg, Xte, yte)
    victim = _load_ckpt(args.victim, _victim_template())
    pgd = runconfig.pgd_from(cfg, "pgd")
    targets = sorted({int(c) for c in labels})
    out = pipeline.pgd_baseline_grid(victim, sources, labels, targets, norm=pgd.norm,
                                     eps=pgd.eps, alpha=pgd.alpha, steps=pgd.steps)
    path = imggrid.emit_grid(out["images"], cols=len(targets) - 1,
                             border_flags=out["deceives"],
                             path=os.path.join(args.out, f"pgd-{pgd.norm}-{pgd.eps}.png"))
    print(f"wrote {path}  deceived={int(out['deceives'].sum())}/{len(out['deceives'])}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    surrogate = _load_ckpt(args.surrogate, _victim_template())
    rows = []
    for name in sorted(os.listdir(args.refined_dir)):
        if not (name.startswith("refined-") and name.endswith(".saet")):
            continue
        y_ori = int(name[len("refined-"):].split("-to-")[0])
        imgs = dataio.load_tensor(os.path.join(args.refined_dir, name))
        pred = predict_logits(surrogate, imgs).argmax(axis=1)
        rows.append({"file": name, "y_ori": y_ori,
                     "success_rate": float((pred == y_ori).mean()), "n": int(len(imgs))})
    _write_report(os.path.join(args.out, "eval.jsonl"), rows)
    for r in rows:
        print(f"{r['file']}: success_rate={r['success_rate']:.4f} (n={r['n']})")
    if not rows:
        print("no refined-*.saet files found", file=sys.stderr)
        return 1
    return 0


def cmd_selftest(args) -> int:
    failures = 0

    def report(name, ok, detail):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1

    # Langevin stationary variance on the quadratic energy
    class Quadratic(samplers.EnergyFn):
        def value_and_grad(self, x):
            return float(0.5 * np.sum(x * x)), x.copy()

    details = []
    ok = True
    for eps in (0.05, 0.1, 0.2):
        cfg = samplers.SamplerConfig(step_size=eps, n_steps=14_000, seed=0, keep_every=1)
        states = samplers.lmc(Quadratic(), cfg, x0=np.zeros(100)).states[4000:]
        target = 1.0 / (1.0 - eps * eps / 4.0)
        rel = abs(states.var() - target) / target
        details.append(f"eps={eps}: rel={rel:.4f}")
        ok = ok and rel < 0.02
    report("lmc-variance", ok, "; ".join(details))

    # thin-plate-spline interpolation
    from . import tps

    src = tps.control_lattice(28, 28, 5)
    dst = src + np.random.default_rng(0).normal(0, 2.0, size=src.shape)
    fit = tps.tps_fit(src, dst)
    err = float(np.abs(fit.map_points(src) - dst).max())
    report("tps-interpolation", err <= 1e-4, f"max residual {err:.2e} px")

    # gradient check on a small conv + swish + affine stack
    from . import tensor as T
    from .tensor import Tensor

    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((2, 1, 3, 3)) * 0.5, dtype=np.float64)
    b = Tensor(rng.standard_normal(2) * 0.1, dtype=np.float64)
    x0 = rng.standard_normal((1, 1, 8, 8))

    def f(arr):
        return float(T.swish(T.conv2d(Tensor(arr), w, b, stride=2, pad=1)).sum().data)

    xt = Tensor(x0, requires_grad=True)
    T.swish(T.conv2d(xt, w, b, stride=2, pad=1)).sum().backward()
    h = 1e-6
    worst = 0.0
    flat = x0.ravel()
    for i in range(0, flat.size, 7):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        fd = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
        worst = max(worst, abs(fd - xt.grad.ravel()[i]) / max(1.0, abs(fd)))
    report("gradient-check", worst < 1e-5, f"max rel err {worst:.2e}")

    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semadv",
                                description="semantics-aware adversarial examples")
    subs = p.add_subparsers(dest="command", required=True)

    s = subs.add_parser("train-classifier", help="train the victim/aux/surrogate CNN")
    s.add_argument("--role", choices=["victim", "aux", "surrogate"], default="victim")
    _common(s)
    s.set_defaults(fn=cmd_train_classifier)

    s = subs.add_parser("adv-train", help="adversarially train the victim")
    _common(s)
    s.set_defaults(fn=cmd_adv_train)

    s = subs.add_parser("train-ebm", help="train the single-image energy model")
    s.add_argument("--source-class", type=int, required=True)
    _common(s)
    s.set_defaults(fn=cmd_train_ebm)

    s = subs.add_parser("sample-victim", help="sample the victim expert only")
    s.add_argument("--victim", required=True)
    s.add_argument("--target", type=int, required=True)
    s.add_argument("--count", type=int, default=36)
    _common(s)
    s.set_defaults(fn=cmd_sample_victim)

    s = subs.add_parser("attack", help="one source/target attack")
    s.add_argument("--victim", required=True)
    s.add_argument("--aux", required=True)
    s.add_argument("--ebm", default=None)
    s.add_argument("--source-class", type=int, required=True)
    s.add_argument("--target", type=int, required=True)
    _common(s)
    s.set_defaults(fn=cmd_attack)

    s = subs.add_parser("grid", help="full sources x targets success grid")
    s.add_argument("--victim", required=True)
    s.add_argument("--aux", required=True)
    s.add_argument("--surrogate", required=True)
    s.add_argument("--classes", default=None, help="comma list restricting source classes")
    _common(s)
    s.set_defaults(fn=cmd_grid)

    s = subs.add_parser("pgd-baseline", help="targeted PGD comparison grid")
    s.add_argument("--victim", required=True)
    _common(s)
    s.set_defaults(fn=cmd_pgd_baseline)

    s = subs.add_parser("eval", help="surrogate success rates for refined samples")
    s.add_argument("--surrogate", required=True)
    s.add_argument("--refined-dir", required=True)
    _common(s)
    s.set_defaults(fn=cmd_eval)

    s = subs.add_parser("selftest", help="analytic sampler, TPS and gradient suites")
    _common(s)
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - single diagnostic line, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
