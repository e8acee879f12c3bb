"""Command-line pipeline: preprocess | synth | train | sample | generate | evaluate | report.

Every command takes explicit seeds and writes deterministic artifacts (no
timestamps, sorted JSON keys), so identical invocations produce byte-identical
outputs. Exit codes: 0 success, 2 input error, 3 configuration mismatch,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import marketstate, metaagent, report, stylizedfacts
from .controller import MetaController
from .marketstate import (
    INDICATOR_NAMES,
    IndicatorBinner,
    StateNormalizer,
    compute_indicators,
    indicators_from_states,
    load_corpus,
    save_corpus,
    states_to_array,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

TARGET_ALIASES = {
    "return": "daily_return",
    "daily_return": "daily_return",
    "amplitude": "amplitude",
    "volatility": "volatility",
}


class ConfigMismatch(Exception):
    pass


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")


def _corpus_stats(states, out_path: Path) -> None:
    X = states_to_array(states)
    normalizer = StateNormalizer().fit(X)
    bins = {}
    for name in INDICATOR_NAMES:
        values = np.array([indicators_from_states(s).value(name) for s in states])
        try:
            bins[name] = IndicatorBinner().fit(values).to_dict()
        except ValueError:
            bins[name] = None  # too few distinct values to bin
    _write_json(out_path, {
        "days": len(states),
        "minutes": states[0].minutes,
        "normalizer": normalizer.to_dict(),
        "bins": bins,
    })


# ---------------------------------------------------------------------------
# preprocess / synth
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    ticks_path = Path(args.ticks)
    if not ticks_path.exists():
        print(f"error: tick file {ticks_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    # Days are delimited by a timestamp reset (t decreasing between lines).
    days: list[list[dict]] = []
    current: list[dict] = []
    dropped = 0
    last_t = None
    for lineno, line in enumerate(ticks_path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        try:
            rec = marketstate.parse_tick_line(line)
        except (ValueError, KeyError) as exc:
            print(f"warning: {ticks_path}:{lineno}: {exc}; dropping day",
                  file=sys.stderr)
            current.append(None)
            continue
        if last_t is not None and rec["t"] < last_t and current:
            days.append(current)
            current = []
        current.append(rec)
        last_t = rec["t"]
    if current:
        days.append(current)

    states = []
    for day_records in days:
        if any(r is None for r in day_records):
            dropped += 1
            continue
        try:
            states.append(marketstate.extract_market_states(
                day_records, minutes=args.minutes, tick=args.tick))
        except ValueError as exc:
            print(f"warning: dropping day: {exc}", file=sys.stderr)
            dropped += 1
    if not states:
        print("error: no usable days in input", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out / "corpus.csv", states)
    _corpus_stats(states, out / "corpus_stats.json")
    print(f"wrote {len(states)} days ({dropped} dropped) to {out / 'corpus.csv'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    states, _ = stylizedfacts.synth_corpus(
        seed=args.seed, days=args.days, minutes=args.minutes,
        base_arrival=args.base_arrival)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out / "corpus.csv", states)
    _corpus_stats(states, out / "corpus_stats.json")
    print(f"wrote {len(states)} synthetic days to {out / 'corpus.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / sample
# ---------------------------------------------------------------------------

TRAIN_CONFIG_KEYS = {
    "base_width", "width_mults", "kernel_size", "embed_dim", "norm_groups",
    "n_steps", "beta_start", "beta_end", "epochs", "batch_size", "lr",
    "weight_decay", "p_uncond", "max_steps", "ddim_steps", "x0_clamp", "seed",
}


def cmd_train(args) -> int:
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        print(f"error: corpus {corpus_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    params: dict = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            print(f"error: config {cfg_path} does not exist", file=sys.stderr)
            return EXIT_INPUT
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        unknown = set(cfg) - TRAIN_CONFIG_KEYS
        if unknown:
            raise ConfigMismatch(f"unknown training config keys {sorted(unknown)}")
        params.update(cfg)
    if "width_mults" in params:
        params["width_mults"] = tuple(params["width_mults"])
    if args.seed is not None:
        params["seed"] = args.seed
    if args.epochs is not None:
        params["epochs"] = args.epochs

    target = TARGET_ALIASES.get(args.target)
    if target is None:
        raise ConfigMismatch(f"unknown target indicator {args.target!r}")
    states = load_corpus(corpus_path)
    X = states_to_array(states)
    y = np.array([indicators_from_states(s).value(target) for s in states])
    est = MetaController(target=target, encoder=args.encoder, **params)
    est.fit(X, y)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bin_path, json_path = est.save(out / "ckpt")
    final_loss = float(np.mean(est.losses_[-20:]))
    print(f"trained {len(est.losses_)} steps (final smoothed loss {final_loss:.4f}); "
          f"wrote {bin_path} and {json_path}")
    return EXIT_OK


def _parse_scales(raw: str) -> list[float]:
    scales = [float(s) for s in raw.split(",") if s.strip()]
    if not scales or any(s < 0 for s in scales):
        raise ConfigMismatch(f"invalid guidance scales {raw!r}")
    return scales


def cmd_sample(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.with_suffix(".json").exists():
        print(f"error: checkpoint {ckpt} does not exist", file=sys.stderr)
        return EXIT_INPUT
    est = MetaController.load(ckpt)
    if args.target is not None:
        requested = TARGET_ALIASES.get(args.target)
        if requested != est.target:
            raise ConfigMismatch(
                f"checkpoint was trained for {est.target!r}, not {args.target!r}")
    if args.value is not None and est.encoder != "continuous":
        raise ConfigMismatch("--value needs a continuous-encoder checkpoint")
    if args.uncond:
        scales = [0.0]
        label, value = None, None
        tag = "uncond"
    else:
        if args.label is None and args.value is None:
            raise ConfigMismatch("need --class, --value or --uncond")
        scales = _parse_scales(args.scale)
        label, value = args.label, args.value
        tag = f"bin{label}" if label is not None else f"value{value:g}"

    out = Path(args.out)
    entries = []
    for scale in scales:
        for k in range(args.seeds):
            seed = args.seed + k
            sampled = est.sample(n_samples=1, label=label, value=value,
                                 guidance_scale=scale, method=args.method,
                                 seed=seed)
            if not np.all(np.isfinite(sampled)):
                raise FloatingPointError("sampler produced non-finite states")
            day = marketstate.MarketStateDay.from_array(sampled[0])
            rel = Path("samples") / f"{tag}_s{scale:g}" / f"seed{seed}.csv"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            save_corpus(out / rel, [day])
            target_value = None
            if label is not None:
                target_value = float(est.binner_.medians_[int(label)])
            elif value is not None:
                target_value = float(value)
            entries.append({"file": str(rel), "bin": label, "scale": scale,
                            "seed": seed, "target_value": target_value})
    manifest = {
        "target": est.target,
        "encoder": est.encoder,
        "method": args.method,
        "scales": scales,
        "entries": entries,
    }
    _write_json(out / "sample_manifest.json", manifest)
    print(f"wrote {len(entries)} state files under {out / 'samples'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate / evaluate / report
# ---------------------------------------------------------------------------

def _agent_params(overrides_json: str | None) -> metaagent.MetaAgentParams:
    params = metaagent.MetaAgentParams()
    if overrides_json:
        overrides = json.loads(overrides_json)
        params = params.with_overrides(**overrides)
    return params


def cmd_generate(args) -> int:
    states_path = Path(args.states)
    if not states_path.exists():
        print(f"error: states path {states_path} does not exist", file=sys.stderr)
        return EXIT_INPUT
    params = _agent_params(args.agent_overrides)

    jobs: list[tuple[str, marketstate.MarketStateDay, dict]] = []
    if states_path.is_dir():
        manifest_path = states_path / "sample_manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            for entry in manifest["entries"]:
                day = load_corpus(states_path / entry["file"])[0]
                name = Path(entry["file"]).with_suffix("").name
                stem = Path(entry["file"]).parent.name + "_" + name
                jobs.append((stem, day, entry))
        else:
            for csv_path in sorted(states_path.glob("*.csv")):
                for i, day in enumerate(load_corpus(csv_path)):
                    jobs.append((f"{csv_path.stem}_day{i}", day, {}))
    else:
        for i, day in enumerate(load_corpus(states_path)):
            jobs.append((f"{states_path.stem}_day{i}", day, {}))
    if args.limit is not None:
        jobs = jobs[:args.limit]
    if not jobs:
        print("error: no state days found", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    (out / "flows").mkdir(parents=True, exist_ok=True)
    (out / "prices").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (stem, day, meta) in enumerate(jobs):
        run = metaagent.generate_day(day, params, seed=args.seed + i,
                                     tick=args.tick)
        flow_rel = Path("flows") / f"{stem}.jsonl"
        price_rel = Path("prices") / f"{stem}.csv"
        metaagent.write_order_flow(out / flow_rel, run.orders)
        metaagent.write_price_path(out / price_rel, run.minute_prices,
                                   run.minute_oir)
        entries.append({
            "flow": str(flow_rel), "prices": str(price_rel),
            "orders": len(run.orders), "seed": args.seed + i,
            "bin": meta.get("bin"), "scale": meta.get("scale"),
            "target_value": meta.get("target_value"),
        })
    _write_json(out / "generate_manifest.json", {"entries": entries})
    total = sum(e["orders"] for e in entries)
    print(f"generated {len(entries)} days, {total} orders, under {out}")
    return EXIT_OK


def _load_price_dir(path: Path) -> tuple[list[np.ndarray], list[np.ndarray]]:
    prices, oirs = [], []
    for csv_path in sorted(path.glob("*.csv")):
        p, o = metaagent.load_price_path(csv_path)
        prices.append(p)
        oirs.append(o)
    if not prices:
        raise ValueError(f"no price CSVs under {path}")
    return prices, oirs


def cmd_evaluate(args) -> int:
    real_dir, sim_dir = Path(args.real_prices), Path(args.sim_prices)
    real_prices, real_oir = _load_price_dir(real_dir)
    sim_prices, sim_oir = _load_price_dir(sim_dir)
    lags = tuple(int(s) for s in args.lags.split(","))
    real_facts = stylizedfacts.compute_facts(real_prices, real_oir, lags)
    sim_facts = stylizedfacts.compute_facts(sim_prices, sim_oir, lags)

    def kl(a, b):
        return stylizedfacts.kl_divergence(a, b, bins=args.bins)

    facts_kl = {
        "minr": kl(real_facts.minr, sim_facts.minr),
        "oir": kl(real_facts.oir, sim_facts.oir),
        "retac": {str(lag): kl(real_facts.retac[:, i], sim_facts.retac[:, i])
                  for i, lag in enumerate(lags)},
        "volc": {str(lag): kl(real_facts.volc[:, i], sim_facts.volc[:, i])
                 for i, lag in enumerate(lags)},
    }

    payload = {"facts_kl": facts_kl, "lags": list(lags)}

    manifest_path = Path(args.sim_prices).parent / "generate_manifest.json"
    if args.manifest:
        manifest_path = Path(args.manifest)
    if manifest_path.exists():
        target = TARGET_ALIASES.get(args.target) if args.target else "daily_return"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        groups: dict[tuple, list] = {}
        for entry in manifest["entries"]:
            if entry.get("target_value") is None:
                continue
            prices, _ = metaagent.load_price_path(manifest_path.parent / entry["prices"])
            realized = compute_indicators(prices).value(target)
            key = (entry.get("scale"), entry.get("bin"))
            groups.setdefault(key, []).append((entry["target_value"], realized))
        if groups:
            control = {}
            for (scale, bin_label), pairs in sorted(groups.items()):
                targets = np.array([t for t, _ in pairs])
                realized = np.array([r for _, r in pairs])
                control.setdefault(f"scale{scale:g}", {})[f"bin{bin_label}"] = {
                    "target": float(targets[0]),
                    "n": len(pairs),
                    "realized_mean": float(realized.mean()),
                    "mse": stylizedfacts.controllability_mse(targets, realized),
                }
            payload["controllability"] = {"indicator": target, "per_scale": control}

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    print(f"wrote evaluation report to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    report_path = Path(args.evaluation)
    if not report_path.exists():
        print(f"error: evaluation report {report_path} missing", file=sys.stderr)
        return EXIT_INPUT
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    sim_dir = Path(args.sim_prices)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    manifest_path = sim_dir.parent / "generate_manifest.json"
    curves: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    by_bin: dict[str, dict[str, list[float]]] = {n: {} for n in INDICATOR_NAMES}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        per_bin_count: dict[str, int] = {}
        for entry in manifest["entries"]:
            prices, _ = metaagent.load_price_path(manifest_path.parent / entry["prices"])
            label = "corpus" if entry.get("bin") is None else f"bin{entry['bin']}"
            per_bin_count[label] = per_bin_count.get(label, 0) + 1
            if per_bin_count[label] <= args.curves_per_bin:
                key = f"{label}#{per_bin_count[label]}"
                curves[key] = (np.arange(len(prices)), prices / prices[0])
            realized = compute_indicators(prices)
            for name in INDICATOR_NAMES:
                by_bin[name].setdefault(label, []).append(realized.value(name))
    else:
        for i, csv_path in enumerate(sorted(sim_dir.glob("*.csv"))[:args.curves_per_bin]):
            prices, _ = metaagent.load_price_path(csv_path)
            curves[csv_path.stem] = (np.arange(len(prices)), prices / prices[0])

    if curves:
        report.write_svg(out / "price_curves.svg", report.line_chart_svg(
            curves, "Generated price curves", "minute", "price / open"))
    for name in INDICATOR_NAMES:
        if by_bin[name]:
            report.write_svg(
                out / f"density_{name}.svg",
                report.density_chart_svg(
                    by_bin[name], f"Realized {name.replace('_', ' ')} by control bin",
                    name.replace("_", " ")))

    kl = payload.get("facts_kl", {})
    lines = ["statistic,kl_divergence"]
    for stat in ("minr", "oir"):
        if stat in kl:
            lines.append(f"{stat},{kl[stat]!r}")
    for stat in ("retac", "volc"):
        for lag, value in sorted(kl.get(stat, {}).items(), key=lambda kv: int(kv[0])):
            lines.append(f"{stat}_lag{lag},{value!r}")
    (out / "facts_kl.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote report artifacts under {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketgen",
        description="Controllable market generation: diffusion-guided order flow.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tick JSONL -> market-state corpus")
    p.add_argument("--ticks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--minutes", type=int, default=marketstate.DEFAULT_MINUTES)
    p.add_argument("--tick", type=float, default=0.01)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth", help="synthetic market-state corpus")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--minutes", type=int, default=marketstate.DEFAULT_MINUTES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-arrival", type=float, default=60.0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="fit the diffusion controller")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", default="daily_return",
                   help="return | amplitude | volatility")
    p.add_argument("--encoder", choices=("discrete", "continuous"),
                   default="continuous")
    p.add_argument("--config", help="JSON file of training hyper-parameters")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample state days from a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint base path (no suffix)")
    p.add_argument("--out", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--class", dest="label", type=int, default=None)
    p.add_argument("--value", type=float, default=None)
    p.add_argument("--uncond", action="store_true")
    p.add_argument("--scale", default="2",
                   help="guidance scale or comma list, e.g. 1,2,4,6,8")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--method", choices=("ddim", "ddpm"), default="ddim")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("generate", help="order flow from state days")
    p.add_argument("--states", required=True,
                   help="corpus CSV, sample dir, or dir of CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tick", type=float, default=0.01)
    p.add_argument("--agent-overrides", default=None,
                   help="JSON object of MetaAgentParams overrides")
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="stylized-fact KL + controllability MSE")
    p.add_argument("--real-prices", required=True)
    p.add_argument("--sim-prices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None,
                   help="generate_manifest.json with bin/target metadata")
    p.add_argument("--target", default=None)
    p.add_argument("--lags", default="1,2,3,5,10")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="render SVG charts from an evaluation")
    p.add_argument("--evaluation", required=True)
    p.add_argument("--sim-prices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves-per-bin", type=int, default=8)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
