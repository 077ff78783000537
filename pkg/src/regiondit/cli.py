"""``region-dit`` command line.

Exit codes: 0 ok, 2 config error, 3 pipeline error, 4 transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import RunConfig, config_from_dict, load_config
from .errors import ConfigError, PipelineError, RegionDitError, RegionError, SchemaError, TransportError
from .masks import LatentGrid, RegionSpec
from .prompts import LlmClientConfig, generate_prompts, offline_template

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3
EXIT_TRANSPORT = 4


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.seeds = replace(cfg.seeds, weights=args.seed, noise=args.seed, text=args.seed)
    if args.out:
        cfg.output = args.out
    return cfg.validate()


def cmd_generate(args) -> int:
    from .pipeline import run_generate

    cfg = _load(args)
    report = run_generate(cfg, cfg.output, offline=args.offline)
    print(json.dumps({"out": cfg.output, "steps": report["num_steps"], "checksums": report["checksums"]}, indent=2))
    return EXIT_OK


def cmd_ablate_depth(args) -> int:
    from .pipeline import run_ablation

    cfg = _load(args)
    report = run_ablation(cfg, cfg.output, offline=args.offline or cfg.prompts.source == "offline",
                          trend=not args.no_trend)
    summary = {"out": cfg.output, "csv": report["csv"]}
    if "trend" in report:
        summary["trend"] = {k: report["trend"][k] for k in ("policy", "increased", "seeds")}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_masks(args) -> int:
    from .pipeline import run_masks

    cfg = _load(args)
    axis = args.axis or cfg.regions.axis
    count = args.count if args.count is not None else cfg.regions.count
    layout = args.layout or (tuple(cfg.regions.layout) if cfg.regions.layout else None)
    height = args.height or cfg.grid.height
    width = args.width or cfg.grid.width
    index = run_masks(RegionSpec(axis, count, layout), LatentGrid(height, width), cfg.output)
    print(json.dumps(index, indent=2))
    return EXIT_OK


def cmd_prompts(args) -> int:
    cfg = _load(args)
    intent = args.intent or cfg.prompts.intent
    n = args.n if args.n is not None else cfg.regions.count
    use_llm = args.llm or (not args.offline and cfg.prompts.source == "llm")
    if use_llm:
        llm = cfg.prompts.llm
        client = LlmClientConfig(
            args.endpoint or llm.endpoint, args.model or llm.model, llm.api_key_env,
            llm.timeout if args.timeout is None else args.timeout,
            llm.max_retries if args.retries is None else args.retries,
            llm.backoff, llm.concurrency,
        )
        pp = generate_prompts(intent, n, client)
    else:
        pp = offline_template(intent, n)
    print(pp.to_json(indent=2))
    return EXIT_OK


def _layout(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"layout must look like 3x3, got {text!r}") from None
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override all seeds (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--offline", action="store_true", help="use the offline prompt template")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="region-dit", description="Regional prompt attention for DiT stacks.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="sample a latent with regional prompts")
    g.set_defaults(fn=cmd_generate)

    a = sub.add_parser("ablate-depth", parents=[common], help="sweep the number of injected blocks")
    a.add_argument("--no-trend", action="store_true", help="skip the multi-seed trend check")
    a.set_defaults(fn=cmd_ablate_depth)

    m = sub.add_parser("masks", parents=[common], help="dump region masks as PGM images")
    m.add_argument("--axis", choices=["height", "width"])
    m.add_argument("--count", type=int)
    m.add_argument("--layout", type=_layout, help="rows x cols grid, e.g. 3x3")
    m.add_argument("--height", type=int)
    m.add_argument("--width", type=int)
    m.set_defaults(fn=cmd_masks)

    pr = sub.add_parser("prompts", parents=[common], help="progressive prompts as JSON")
    pr.add_argument("--intent")
    pr.add_argument("--n", type=int)
    pr.add_argument("--llm", action="store_true", help="query the configured LLM endpoint")
    pr.add_argument("--endpoint")
    pr.add_argument("--model")
    pr.add_argument("--timeout", type=float)
    pr.add_argument("--retries", type=int)
    pr.set_defaults(fn=cmd_prompts)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegionError as exc:
        print(f"region error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (PipelineError, SchemaError, RegionDitError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
