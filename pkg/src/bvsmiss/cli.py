"""Batch command-line front end.

Subcommands: ``simulate``, ``enumerate``, ``mcmc``, ``graph-select``,
``benchmark``. Configuration comes from flags plus an optional JSON
config file (flags override the file); the effective configuration is
echoed to ``config.json`` in the output directory, and feeding that file
back through ``--config`` reproduces the run. Log lines go to standard
error; results go to files. Every stochastic subcommand requires
``--seed`` and re-running with the same configuration produces
byte-identical outputs. Exit code 0 means every requested output was
written.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import datamodel, graphs, impute, priors, search

log = logging.getLogger("bvsmiss.cli")


def _pick(flag_value, file_cfg: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _load_file_cfg(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _outdir(cfg: dict) -> str:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _load_dataset(cfg: dict) -> datamodel.Dataset:
    with open(cfg["data"]) as fh:
        text = fh.read()
    return datamodel.load_dataset(text, na_token=cfg["na_token"], response_column=cfg["response"])


def _parse_variant(name: str, g) -> priors.GPriorVariant:
    g = float(g) if g is not None else None
    if name == "classical":
        return priors.Classical(g=g)
    if name == "imputation":
        return priors.Imputation(g=g)
    if name == "induced":
        return priors.InducedFractional(g=g)
    raise ValueError(f"unknown prior variant {name!r}")


def _parse_model_prior(spec: str) -> priors.ModelPrior:
    if spec == "uniform":
        return priors.Uniform()
    if spec.startswith("betabinomial:"):
        a, b = spec.split(":", 1)[1].split(",")
        return priors.BetaBinomial(a=float(a), b=float(b))
    raise ValueError(f"unknown model prior {spec!r}")


def _parse_cov(spec: str, p: int) -> np.ndarray:
    if spec == "identity":
        return np.eye(p)
    kind, _, value = spec.partition(":")
    if kind == "exch":
        rho = float(value)
        return (1 - rho) * np.eye(p) + rho * np.ones((p, p))
    if kind == "ar1":
        rho = float(value)
        idx = np.arange(p)
        return rho ** np.abs(idx[:, None] - idx[None, :])
    raise ValueError(f"unknown covariance spec {spec!r}")


def _parse_effects(spec: str, p: int):
    beta = np.zeros(p)
    if spec:
        for item in spec.split(","):
            idx, _, value = item.partition(":")
            j = int(idx) - 1
            if not 0 <= j < p:
                raise ValueError(f"effect index {idx} out of range for p = {p}")
            beta[j] = float(value)
    gamma = datamodel.ModelIndex(tuple(int(b != 0.0) for b in beta))
    return gamma, beta


def _stream_cfg(cfg: dict) -> impute.StreamConfig:
    prior = None if cfg["nu_prior"] == "default" else cfg["nu_prior"]
    return impute.StreamConfig(
        j=cfg["j"],
        burnin=cfg["stream_burnin"],
        thin=cfg["stream_thin"],
        mode=cfg["mode"],
        prior=prior,
        seed=cfg["seed"],
    )


def cmd_simulate(args) -> int:
    file_cfg = _load_file_cfg(args.config)
    cfg = {
        "subcommand": "simulate",
        "n": int(_pick(args.n, file_cfg, "n", 100)),
        "p": int(_pick(args.p, file_cfg, "p", 3)),
        "alpha": float(_pick(args.alpha, file_cfg, "alpha", 0.0)),
        "sigma2": float(_pick(args.sigma2, file_cfg, "sigma2", 1.0)),
        "effects": _pick(args.effects, file_cfg, "effects", ""),
        "mu": float(_pick(args.mu, file_cfg, "mu", 0.0)),
        "cov": _pick(args.cov, file_cfg, "cov", "identity"),
        "mcar": _pick(args.mcar, file_cfg, "mcar", None),
        "mar": _pick(args.mar, file_cfg, "mar", None),
        "seed": int(_pick(args.seed, file_cfg, "seed", None)),
        "out": _pick(args.out, file_cfg, "out", "."),
    }
    p = cfg["p"]
    gamma, beta = _parse_effects(cfg["effects"], p)
    if cfg["mar"] is not None:
        driver, intercept, slope = cfg["mar"].split(",") if isinstance(cfg["mar"], str) else cfg["mar"]
        mechanism = datamodel.Mar(int(driver) - 1, float(intercept), float(slope))
        cfg["mar"] = f"{driver},{intercept},{slope}"
    else:
        rate = float(cfg["mcar"]) if cfg["mcar"] is not None else 0.0
        mechanism = datamodel.Mcar(rate)
        cfg["mcar"] = rate
    sim = datamodel.SimConfig(
        n=cfg["n"],
        p=p,
        mu_true=np.full(p, cfg["mu"]),
        sigma_true=_parse_cov(cfg["cov"], p),
        gamma_true=gamma,
        alpha_true=cfg["alpha"],
        beta_true=beta,
        sigma2_true=cfg["sigma2"],
        mechanism=mechanism,
        seed=cfg["seed"],
    )
    dataset, truth = datamodel.simulate_dataset(sim)
    out = _outdir(cfg)
    _write_text(os.path.join(out, "data.csv"), datamodel.serialize_dataset(dataset))
    _write_json(os.path.join(out, "truth.json"), truth)
    _write_json(os.path.join(out, "config.json"), cfg)
    observed = dataset.mask.mean()
    print(
        f"simulate: wrote {dataset.n} rows, {dataset.p} covariates, "
        f"{observed:.4g} observed fraction -> {out}"
    )
    return 0


def _common_inference_cfg(args, file_cfg, subcommand: str) -> dict:
    return {
        "subcommand": subcommand,
        "data": _pick(args.data, file_cfg, "data", None),
        "response": _pick(args.response, file_cfg, "response", "y"),
        "na_token": _pick(args.na_token, file_cfg, "na_token", "NA"),
        "variant": _pick(args.variant, file_cfg, "variant", "classical"),
        "g": _pick(args.g, file_cfg, "g", None),
        "model_prior": _pick(args.model_prior, file_cfg, "model_prior", "uniform"),
        "j": int(_pick(args.j, file_cfg, "j", 200)),
        "mode": _pick(args.mode, file_cfg, "mode", "shared"),
        "stream_burnin": int(_pick(args.stream_burnin, file_cfg, "stream_burnin", 50)),
        "stream_thin": int(_pick(args.stream_thin, file_cfg, "stream_thin", 1)),
        "nu_prior": _pick(args.nu_prior, file_cfg, "nu_prior", "default"),
        "seed": int(_pick(args.seed, file_cfg, "seed", None)),
        "out": _pick(args.out, file_cfg, "out", "."),
    }


def cmd_enumerate(args) -> int:
    file_cfg = _load_file_cfg(args.config)
    cfg = _common_inference_cfg(args, file_cfg, "enumerate")
    cfg["max_p"] = int(_pick(args.max_p, file_cfg, "max_p", 15))
    dataset = _load_dataset(cfg)
    if dataset.p > cfg["max_p"]:
        raise ValueError(
            f"p = {dataset.p} exceeds the enumeration cap {cfg['max_p']}; use `bvsmiss mcmc`"
        )
    variant = _parse_variant(cfg["variant"], cfg["g"])
    stream = impute.make_stream(dataset, _stream_cfg(cfg))
    summary = search.enumerate_models(
        dataset, stream, variant, _parse_model_prior(cfg["model_prior"]), p_max_check=cfg["max_p"]
    )
    out = _outdir(cfg)
    _write_text(os.path.join(out, "model_table.csv"), summary.model_table_csv())
    _write_json(os.path.join(out, "summary.json"), summary.to_json_dict())
    _write_json(os.path.join(out, "config.json"), cfg)
    print(f"enumerate: {len(summary.records)} models, modal {summary.modal_model().label()} -> {out}")
    return 0


def _renormalized_summary(dataset, chain, variant, cfg) -> search.PosteriorSummary:
    """Recompute averaged marginals for the visited models with a fresh
    shared stream, then renormalize over them."""
    fresh_seed = int(np.random.SeedSequence([cfg["seed"], 911]).generate_state(1)[0])
    stream_cfg = impute.StreamConfig(
        j=cfg["j"],
        burnin=cfg["stream_burnin"],
        thin=cfg["stream_thin"],
        mode="shared",
        prior=None if cfg["nu_prior"] == "default" else cfg["nu_prior"],
        seed=fresh_seed,
    )
    stream = impute.make_stream(dataset, stream_cfg)
    marginals = {}
    for code in sorted({m.as_int() for m in chain.visited}):
        model = datamodel.ModelIndex.from_int(chain.p, code)
        marginals[code] = search.rb_marginal(model, dataset, stream, variant).log_mhat
    return search.estimate_probs(
        chain, "Renormalized", _parse_model_prior(cfg["model_prior"]), log_marginals=marginals
    )


def cmd_mcmc(args) -> int:
    file_cfg = _load_file_cfg(args.config)
    cfg = _common_inference_cfg(args, file_cfg, "mcmc")
    cfg.update(
        {
            "sampler": _pick(args.sampler, file_cfg, "sampler", None),
            "iterations": int(_pick(args.iterations, file_cfg, "iterations", 20000)),
            "burnin": int(_pick(args.burnin, file_cfg, "burnin", 2000)),
            "thin": int(_pick(args.thin, file_cfg, "thin", 1)),
            "proposal": _pick(args.proposal, file_cfg, "proposal", "single-flip"),
            "threads": int(_pick(args.threads, file_cfg, "threads", 1)),
        }
    )
    if cfg["sampler"] not in ("its", "sias", "gibbs"):
        raise ValueError(f"unknown sampler {cfg['sampler']!r}; choose its, sias, or gibbs")
    dataset = _load_dataset(cfg)
    variant = _parse_variant(cfg["variant"], cfg["g"])
    model_prior = _parse_model_prior(cfg["model_prior"])
    mcfg = search.McmcConfig(
        iterations=cfg["iterations"],
        burnin=cfg["burnin"],
        thin=cfg["thin"],
        proposal=cfg["proposal"],
        model_prior=model_prior,
        seed=cfg["seed"],
    )
    stream_cfg = _stream_cfg(cfg)
    out = _outdir(cfg)
    if cfg["sampler"] == "its":
        summary = search.its_two_stage(dataset, stream_cfg, mcfg, variant, workers=cfg["threads"])
        _write_json(
            os.path.join(out, "chain.json"),
            {"sampler": "its", "j": cfg["j"], "pooled": summary.to_json_dict()},
        )
        _write_json(os.path.join(out, "summary_frequency.json"), summary.to_json_dict())
        renorm = _renormalized_from_summary(dataset, summary, variant, cfg)
        _write_json(os.path.join(out, "summary_renormalized.json"), renorm.to_json_dict())
        diagnostics = {"sampler": "its", "j": cfg["j"], "acceptance_rate": None}
    else:
        runner = search.sias_embedded if cfg["sampler"] == "sias" else search.gibbs_informed
        chain = runner(dataset, mcfg, stream_cfg, variant)
        _write_json(os.path.join(out, "chain.json"), chain.to_json_dict())
        freq = search.estimate_probs(chain, "Frequency", model_prior)
        _write_json(os.path.join(out, "summary_frequency.json"), freq.to_json_dict())
        renorm = _renormalized_summary(dataset, chain, variant, cfg)
        _write_json(os.path.join(out, "summary_renormalized.json"), renorm.to_json_dict())
        sizes = [m.size for m in chain.visited]
        incl = chain.inclusion_trace()
        diagnostics = {
            "sampler": cfg["sampler"],
            "acceptance_rate": chain.acceptance_rate,
            "ess_model_size": search.effective_sample_size(sizes),
            "ess_inclusion": [
                search.effective_sample_size(incl[:, k]) for k in range(dataset.p)
            ],
        }
    _write_json(os.path.join(out, "diagnostics.json"), diagnostics)
    _write_json(os.path.join(out, "config.json"), cfg)
    print(f"mcmc[{cfg['sampler']}]: wrote chain and summaries -> {out}")
    return 0


def _renormalized_from_summary(dataset, summary, variant, cfg) -> search.PosteriorSummary:
    """Renormalized estimator over the models visited by the pooled chains."""
    fresh_seed = int(np.random.SeedSequence([cfg["seed"], 911]).generate_state(1)[0])
    stream_cfg = impute.StreamConfig(
        j=cfg["j"],
        burnin=cfg["stream_burnin"],
        thin=cfg["stream_thin"],
        mode="shared",
        prior=None if cfg["nu_prior"] == "default" else cfg["nu_prior"],
        seed=fresh_seed,
    )
    stream = impute.make_stream(dataset, stream_cfg)
    model_prior = _parse_model_prior(cfg["model_prior"])
    records = []
    log_posts = []
    for rec in summary.records:
        est = search.rb_marginal(rec.model, dataset, stream, variant)
        lp = est.log_mhat + priors.log_model_prior(rec.model, model_prior, dataset.p)
        log_posts.append(lp)
        records.append(
            search.ModelRecord(model=rec.model, log_marginal=est.log_mhat, prob=0.0, mc_se=est.mc_se)
        )
    log_posts = np.asarray(log_posts)
    from scipy.special import logsumexp

    probs = np.exp(log_posts - logsumexp(log_posts))
    for rec, pr in zip(records, probs):
        rec.prob = float(pr)
    return search.PosteriorSummary.from_records(records, dataset.p, "Renormalized")


def _parse_graph_prior(spec: str) -> graphs.GraphPrior:
    if spec == "uniform":
        return graphs.UniformGraphPrior()
    if spec.startswith("bernoulli:"):
        return graphs.EdgeBernoulli(rho=float(spec.split(":", 1)[1]))
    raise ValueError(f"unknown graph prior {spec!r}")


def cmd_graph_select(args) -> int:
    file_cfg = _load_file_cfg(args.config)
    cfg = {
        "subcommand": "graph-select",
        "data": _pick(args.data, file_cfg, "data", None),
        "response": _pick(args.response, file_cfg, "response", "y"),
        "na_token": _pick(args.na_token, file_cfg, "na_token", "NA"),
        "g": _pick(args.g, file_cfg, "g", None),
        "iterations": int(_pick(args.iterations, file_cfg, "iterations", 20000)),
        "burnin": int(_pick(args.burnin, file_cfg, "burnin", 2000)),
        "thin": int(_pick(args.thin, file_cfg, "thin", 1)),
        "graph_prior": _pick(args.graph_prior, file_cfg, "graph_prior", "uniform"),
        "collapsed": bool(_pick(args.collapsed or None, file_cfg, "collapsed", False)),
        "seed": int(_pick(args.seed, file_cfg, "seed", None)),
        "out": _pick(args.out, file_cfg, "out", "."),
    }
    dataset = _load_dataset(cfg)
    zd = graphs.ZDataset.from_dataset(dataset)
    gcfg = graphs.GraphChainConfig(
        iterations=cfg["iterations"],
        burnin=cfg["burnin"],
        thin=cfg["thin"],
        seed=cfg["seed"],
        g=float(cfg["g"]) if cfg["g"] is not None else None,
        graph_prior=_parse_graph_prior(cfg["graph_prior"]),
    )
    if cfg["collapsed"]:
        if not zd.is_complete():
            raise ValueError("--collapsed requires complete data")
        chain = graphs.graph_mcmc_collapsed(zd, gcfg)
    else:
        chain = graphs.graph_mcmc_missing(zd, gcfg)
    out = _outdir(cfg)
    _write_text(os.path.join(out, "edge_inclusion.csv"), chain.edge_inclusion_csv())
    _write_json(os.path.join(out, "graphs.json"), chain.to_json_dict())
    _write_json(os.path.join(out, "config.json"), cfg)
    print(
        f"graph-select[{'collapsed' if cfg['collapsed'] else 'missing'}]: "
        f"{len(chain.visited)} recorded graphs -> {out}"
    )
    return 0


def cmd_benchmark(args) -> int:
    file_cfg = _load_file_cfg(args.config)
    cfg = {
        "subcommand": "benchmark",
        "data": _pick(args.data, file_cfg, "data", None),
        "response": _pick(args.response, file_cfg, "response", "y"),
        "na_token": _pick(args.na_token, file_cfg, "na_token", "NA"),
        "variant": _pick(args.variant, file_cfg, "variant", "classical"),
        "g": _pick(args.g, file_cfg, "g", None),
        "reps": int(_pick(args.reps, file_cfg, "reps", 100)),
        "j": int(_pick(args.j, file_cfg, "j", 25)),
        "stream_burnin": int(_pick(args.stream_burnin, file_cfg, "stream_burnin", 30)),
        "seed": int(_pick(args.seed, file_cfg, "seed", None)),
        "out": _pick(args.out, file_cfg, "out", "."),
    }
    if cfg["reps"] < 2:
        raise ValueError("benchmark needs at least 2 replicates")
    dataset = _load_dataset(cfg)
    report = search.variance_benchmark(
        dataset,
        reps=cfg["reps"],
        j=cfg["j"],
        variant=_parse_variant(cfg["variant"], cfg["g"]),
        burnin=cfg["stream_burnin"],
        seed=cfg["seed"],
    )
    out = _outdir(cfg)
    _write_text(os.path.join(out, "variance_table.csv"), report.to_csv_text())
    _write_json(os.path.join(out, "config.json"), cfg)
    print(f"benchmark: {report.reps} replicates, J = {report.j} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvsmiss",
        description="Bayesian variable selection and graphical-model selection "
        "with missing-at-random covariates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset and its truth record")
    sim.add_argument("--config")
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--sigma2", type=float)
    sim.add_argument("--effects", help="included effects as 1-based idx:value pairs, e.g. 1:0.8,3:-1.2")
    sim.add_argument("--mu", type=float)
    sim.add_argument("--cov", help="identity | exch:RHO | ar1:RHO")
    sim.add_argument("--mcar", type=float)
    sim.add_argument("--mar", help="DRIVER,INTERCEPT,SLOPE with a 1-based driver column")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    def add_inference_args(sp, with_stream=True):
        sp.add_argument("--config")
        sp.add_argument("--data")
        sp.add_argument("--response")
        sp.add_argument("--na-token", dest="na_token")
        sp.add_argument("--variant", choices=["classical", "imputation", "induced"])
        sp.add_argument("--g", type=float)
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--out")
        if with_stream:
            sp.add_argument("--model-prior", dest="model_prior")
            sp.add_argument("--j", type=int)
            sp.add_argument("--mode", choices=["shared", "fresh"])
            sp.add_argument("--stream-burnin", dest="stream_burnin", type=int)
            sp.add_argument("--stream-thin", dest="stream_thin", type=int)
            sp.add_argument("--nu-prior", dest="nu_prior", choices=["default", "jeffreys"])

    enum = sub.add_parser("enumerate", help="posterior over all models")
    add_inference_args(enum)
    enum.add_argument("--max-p", dest="max_p", type=int)
    enum.set_defaults(func=cmd_enumerate)

    mcmc = sub.add_parser("mcmc", help="model-space samplers for missing data")
    add_inference_args(mcmc)
    mcmc.add_argument("--sampler", choices=["its", "sias", "gibbs"])
    mcmc.add_argument("--iterations", type=int)
    mcmc.add_argument("--burnin", type=int)
    mcmc.add_argument("--thin", type=int)
    mcmc.add_argument("--proposal", choices=["single-flip", "add-delete-swap"])
    mcmc.add_argument("--threads", type=int)
    mcmc.set_defaults(func=cmd_mcmc)

    gsel = sub.add_parser("graph-select", help="decomposable graph selection")
    gsel.add_argument("--config")
    gsel.add_argument("--data")
    gsel.add_argument("--response")
    gsel.add_argument("--na-token", dest="na_token")
    gsel.add_argument("--g", type=float)
    gsel.add_argument("--iterations", type=int)
    gsel.add_argument("--burnin", type=int)
    gsel.add_argument("--thin", type=int)
    gsel.add_argument("--graph-prior", dest="graph_prior")
    gsel.add_argument("--collapsed", action="store_true", default=False)
    gsel.add_argument("--seed", type=int, required=True)
    gsel.add_argument("--out")
    gsel.set_defaults(func=cmd_graph_select)

    bench = sub.add_parser("benchmark", help="shared vs fresh imputation variance table")
    bench.add_argument("--config")
    bench.add_argument("--data")
    bench.add_argument("--response")
    bench.add_argument("--na-token", dest="na_token")
    bench.add_argument("--variant", choices=["classical", "imputation", "induced"])
    bench.add_argument("--g", type=float)
    bench.add_argument("--reps", type=int)
    bench.add_argument("--j", type=int)
    bench.add_argument("--stream-burnin", dest="stream_burnin", type=int)
    bench.add_argument("--seed", type=int, required=True)
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
