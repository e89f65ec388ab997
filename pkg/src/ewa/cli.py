"""Batch experiment runner.

    ewa --config exp.toml [--seed S] [--threads K] [--out DIR] [--mode M]

Exit codes: 0 success, 1 experiment error, 2 configuration or usage error.
Every output file is a pure function of the validated configuration, so
two runs with the same config and seed are byte-identical whatever the
thread count.
"""

import argparse
import csv
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy

from . import __version__
from .config import config_hash, load_config
from .core import RandomSource
from .data import gaussian_teacher, load_image_task, standardize
from .errors import ConfigError, EWAError
from .ldp import conditional_sample_q, empirical_rate, rate_product, sample_q_batch, sup_deviation
from .nets import NetworkSpec
from .nngp import gram_matrix
from .predictor import learning_curve, write_curve_csv
from .samplers import Posterior, blocking_error, gelman_rubin, lmc_run, mala_run, pcn_run
from .theory.noncentral import noncentral_saddle_1hl, noncentral_setup

__all__ = ["main", "run"]

_SAMPLERS = {"lmc": lmc_run, "mala": mala_run, "pcn": pcn_run}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _pmap(fn, items, threads):
    # results keep input order; each task owns its own random stream
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def load_split(cfg):
    ds = cfg["dataset"]
    if ds["kind"] == "gaussian":
        split = gaussian_teacher(ds["N0"], ds["P"], ds["P_t"], rng=RandomSource(cfg["seed"], 0))
    else:
        split = load_image_task(ds["kind"], ds["classes"], ds["P"], ds["P_t"], seed=cfg["seed"],
                                data_dir=ds["data_dir"] or None)
    if ds["standardize"] and ds["kind"] != "gaussian":
        split = standardize(split)
    return split


def _grid(cfg):
    net, g = cfg["network"], cfg["grid"]
    Ls = g["L"] or [net["L"]]
    Ns = g["N"] or [net["N"]]
    return [{"L": int(L), "N": int(N)} for L in Ls for N in Ns]


def _precisions(cfg, L):
    lam = cfg["network"]["precisions"]
    if lam:
        if len(lam) != L + 1:
            raise ConfigError(f"'network.precisions' needs L+1 = {L + 1} entries")
        return [float(v) for v in lam]
    return [cfg["network"]["lam"]] * (L + 1)


def _lam0(cfg):
    lam = cfg["network"]["precisions"]
    return float(lam[0]) if lam else cfg["network"]["lam"]


def _spec(cfg, split, L, N):
    net = cfg["network"]
    return NetworkSpec(split.n_in, (N,) * L, net["activation"], tuple(_precisions(cfg, L)),
                       temperature=net["temperature"], parametrization=net["parametrization"],
                       gamma0=net["gamma0"])


def _theory_rows(cfg, split, mode):
    rows = []
    for pt in _grid(cfg):
        try:
            spec = _spec(cfg, split, pt["L"], pt["N"])
        except EWAError as exc:
            rows.append(dict(pt, P=split.P, converged=False, error=f"{type(exc).__name__}: {exc}"))
            continue
        rows += learning_curve(split, [pt], spec.act, spec.theory_precisions(),
                               spec.temperature, mode=mode)
    return rows


# ---------------------------------------------------------------- modes

def mode_theory(cfg, split, out, threads):
    mode = cfg["mode"].split("-")[1]
    rows = _theory_rows(cfg, split, mode)
    write_curve_csv(os.path.join(out, "curve.csv"), rows, meta={"config_hash": config_hash(cfg)})
    lines = [f"{mode} learning curve on {split.tag}, P={split.P}"]
    for r in rows:
        lines.append(f"  L={r['L']} N={r['N']} Q={r['Q']:.6g} train={r['train_loss']:.6g} "
                     f"test={r['test_loss']:.6g}" + (f"  [{r['error']}]" if r.get("error") else ""))
    return rows, lines


CHAIN_COLUMNS = ["L", "N", "chain", "sampler", "n_records", "acceptance", "train_mean", "train_err",
                 "test_mean", "test_err", "tau_int", "plateau"]


def _run_chains(cfg, split, pt, threads, out):
    smp = cfg["sampler"]
    spec = _spec(cfg, split, pt["L"], pt["N"])
    n_out = min(smp["n_outputs"], len(split.y_test))
    post = Posterior(spec, split.X_train, split.y_train, split.X_test, split.y_test,
                     test_idx=np.arange(n_out))
    step = smp["phi"] if smp["kind"] == "pcn" else smp["eta"]
    run = _SAMPLERS[smp["kind"]]

    def one(c):
        return run(post, step, smp["steps"], burn_in=smp["burn_in"], thin=smp["thin"],
                   rng=RandomSource(cfg["seed"], 1000 + c))

    recs = _pmap(one, range(smp["chains"]), threads)
    rows = []
    for c, rec in enumerate(recs):
        tr, te = blocking_error(rec.train_loss), blocking_error(rec.test_loss)
        rows.append(dict(pt, chain=c, sampler=rec.sampler, n_records=len(rec),
                         acceptance=rec.acceptance, train_mean=tr.mean, train_err=tr.delta,
                         test_mean=te.mean, test_err=te.delta, tau_int=te.tau_int,
                         plateau=tr.plateau and te.plateau))
        np.savez(os.path.join(out, f"chain_L{pt['L']}_N{pt['N']}_{c}.npz"),
                 train_loss=rec.train_loss, test_loss=rec.test_loss, outputs=rec.outputs)
    rhat = np.nan
    if len(recs) > 1 and len(recs[0]) > 1:
        rhat = gelman_rubin(np.stack([r.test_loss for r in recs]))[1]
    return rows, rhat


def _pool(rows, key):
    m = np.array([r[f"{key}_mean"] for r in rows])
    e = np.array([r[f"{key}_err"] for r in rows])
    return float(m.mean()), float(np.sqrt(np.sum(e**2)) / len(e))


def mode_sample(cfg, split, out, threads):
    rows, lines = [], [f"{cfg['sampler']['kind']} sampling on {split.tag}, P={split.P}"]
    for pt in _grid(cfg):
        r, rhat = _run_chains(cfg, split, pt, threads, out)
        rows += r
        tm, te = _pool(r, "test")
        lines.append(f"  L={pt['L']} N={pt['N']} test={tm:.6g} +- {te:.2g}  R-hat={rhat:.4f}")
    _write_csv(os.path.join(out, "chains.csv"), CHAIN_COLUMNS, rows)
    return rows, lines


RATE_COLUMNS = ["L", "N", "P", "x", "rate", "count", "theory"]


def mode_ldp(cfg, split, out, threads):
    lc = cfg["ldp"]
    C = gram_matrix(split.X_train, _lam0(cfg))
    pts = _grid(cfg)

    def one(i):
        pt = pts[i]
        lam = _precisions(cfg, pt["L"])
        g = RandomSource(cfg["seed"], 2000 + i)
        act = cfg["network"]["activation"]
        if lc["conditional"]:
            b = conditional_sample_q(C, pt["L"], act, lam, pt["N"], lc["samples"], g,
                                     overlap=lc["overlap"])
        else:
            b = sample_q_batch(C, pt["L"], act, lam, pt["N"], lc["samples"], g, per_layer=False)
        return empirical_rate(b.Q, pt["N"], n_bins=lc["n_bins"])

    curves = _pmap(one, range(len(pts)), threads)
    rows, lines = [], [f"LDP study on {split.tag}, P={split.P}, {lc['samples']} samples"]
    for pt, c in zip(pts, curves):
        theory = rate_product(c.x, pt["L"]) if not lc["conditional"] else np.full(len(c.x), np.nan)
        for x, r, n, t in zip(c.x, c.rate, c.counts, theory):
            rows.append(dict(pt, P=split.P, x=x, rate=r, count=int(n), theory=t))
        msg = f"  L={pt['L']} N={pt['N']}: {len(c.x)} bins, x in [{c.x.min():.4g}, {c.x.max():.4g}]"
        if not lc["conditional"]:
            d = sup_deviation(c, lambda y, L=pt["L"]: rate_product(y, L), lc["x_min"], lc["x_max"])
            msg += f", sup deviation on [{lc['x_min']:g}, {lc['x_max']:g}] = {d:.4g}"
        lines.append(msg)
    _write_csv(os.path.join(out, "rates.csv"), RATE_COLUMNS, rows)
    return rows, lines


NONCENTRAL_COLUMNS = ["N", "P", "alpha", "Myy", "Mmy", "Mmm", "Q", "Qbar", "delta", "converged",
                      "error"]


def mode_noncentral(cfg, split, out, threads):
    net = cfg["network"]
    lam = _precisions(cfg, 1)
    C = gram_matrix(split.X_train, _lam0(cfg))
    _, _, ov = noncentral_setup(C, net["activation"], split.y_train)
    rows, lines = [], [f"one-hidden-layer non-central saddle on {split.tag}, P={split.P}"]
    for N in cfg["grid"]["N"] or [net["N"]]:
        alpha = split.P / float(N)
        row = dict(N=N, P=split.P, alpha=alpha, Myy=ov.Myy, Mmy=ov.Mmy, Mmm=ov.Mmm,
                   Q=np.nan, Qbar=np.nan, delta=np.nan, converged=False, error="")
        try:
            st = noncentral_saddle_1hl(ov, alpha, lam[1])
            row.update(Q=st.Q, Qbar=st.Qbar, delta=st.delta, converged=st.converged)
        except EWAError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
        lines.append(f"  N={N} alpha={alpha:.4g} Q={row['Q']:.6g} Delta={row['delta']:.3g}")
    _write_csv(os.path.join(out, "noncentral.csv"), NONCENTRAL_COLUMNS, rows)
    return rows, lines


COMPARE_COLUMNS = ["L", "N", "quantity", "theory_nngp", "theory_ewa", "mcmc", "mcmc_err",
                   "z_nngp", "z_ewa"]


def mode_compare(cfg, split, out, threads):
    nngp = _theory_rows(cfg, split, "nngp")
    ewa = _theory_rows(cfg, split, "ewa")
    rows, chain_rows = [], []
    lines = [f"theory vs {cfg['sampler']['kind']} on {split.tag}, P={split.P}"]
    zs = []
    for pt, tn, te in zip(_grid(cfg), nngp, ewa):
        r, _ = _run_chains(cfg, split, pt, threads, out)
        chain_rows += r
        for q in ("train", "test"):
            m, e = _pool(r, q)
            zn = (m - tn[f"{q}_loss"]) / e if e > 0 else np.nan
            ze = (m - te[f"{q}_loss"]) / e if e > 0 else np.nan
            zs.append(ze)
            rows.append(dict(pt, quantity=f"{q}_loss", theory_nngp=tn[f"{q}_loss"],
                             theory_ewa=te[f"{q}_loss"], mcmc=m, mcmc_err=e, z_nngp=zn, z_ewa=ze))
            lines.append(f"  L={pt['L']} N={pt['N']} {q}: mcmc={m:.6g}+-{e:.2g} "
                         f"nngp={tn[f'{q}_loss']:.6g} (z={zn:.2f}) ewa={te[f'{q}_loss']:.6g} (z={ze:.2f})")
    _write_csv(os.path.join(out, "compare.csv"), COMPARE_COLUMNS, rows)
    _write_csv(os.path.join(out, "chains.csv"), CHAIN_COLUMNS, chain_rows)
    zs = np.abs(np.asarray(zs, dtype=float))
    if np.isfinite(zs).any():
        lines.append(f"  max |z| (EWA) = {np.nanmax(zs):.3f}, mean |z| = {np.nanmean(zs):.3f}")
    return rows, lines


_MODES = {
    "theory-nngp": mode_theory,
    "theory-ewa": mode_theory,
    "sample": mode_sample,
    "ldp": mode_ldp,
    "noncentral": mode_noncentral,
    "compare": mode_compare,
}


def _manifest(cfg):
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "mode": cfg["mode"],
        "config": cfg,
        "versions": {
            "ewa": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _limit_blas(threads):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    # one BLAS thread per worker keeps reductions in a fixed order
    return threadpool_limits(limits=1)


def run(cfg, threads=1):
    """Execute a validated configuration; returns the result rows."""
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_manifest(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    limiter = _limit_blas(threads)
    try:
        split = load_split(cfg)
        rows, lines = _MODES[cfg["mode"]](cfg, split, out, max(1, int(threads)))
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows


def _parser():
    p = argparse.ArgumentParser(prog="ewa", description="Run an EWA experiment from a TOML config.")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--threads", type=int, default=1, metavar="K")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--mode")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "mode": args.mode})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run(cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (EWAError, OSError) as exc:
        print(f"experiment error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"results written to {cfg['out']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
