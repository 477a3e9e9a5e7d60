"""Command-line surface: generation, explanation, baselines, evaluation,
serving, and benchmarking.

Exit codes: 0 success, 2 bad arguments/config, 3 file or format problem,
4 protocol/service failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import attribution, baselines, metrics, service, videoio, viz
from .config import RunConfig
from .errors import FormatError, ProtocolError, StaaError
from .model import init_model
from .videoio import ClipSpec, VideoClip, generate_clip, read_raw_clip, write_raw_clip


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("frames", "height", "width", "pattern", "model_seed", "segments",
                "mc_samples", "perturbations", "reg", "out_dir", "lime_frames"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg.clip_seed = args.seed
    if getattr(args, "lam", None) is not None:
        cfg.lam = args.lam
    return cfg


def _clip_from_args(args, cfg: RunConfig) -> VideoClip:
    if getattr(args, "clip", None):
        return read_raw_clip(args.clip, cfg.frames, cfg.height, cfg.width)
    return generate_clip(ClipSpec(cfg.frames, cfg.height, cfg.width,
                                  seed=cfg.clip_seed, pattern=cfg.pattern))


def _grid(cfg: RunConfig) -> tuple[int, int]:
    return (cfg.height // videoio.PATCH_SIZE, cfg.width // videoio.PATCH_SIZE)


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    clip = generate_clip(ClipSpec(cfg.frames, cfg.height, cfg.width,
                                  seed=cfg.clip_seed, pattern=cfg.pattern))
    path = args.out or _out_path(cfg, clip.clip_id + ".rgb")
    write_raw_clip(clip, path)
    print(f"wrote {clip.num_frames}x{clip.height}x{clip.width} clip to {path}")
    return 0


def cmd_explain(args) -> int:
    cfg = _load_config(args)
    clip = _clip_from_args(args, cfg)
    model = init_model(cfg.model_config())
    params = attribution.EnhancementParams(lam=cfg.lam, enhance=cfg.enhance)
    record = attribution.explain(model, clip, params, keep_raw=True)
    json_path = args.out or _out_path(cfg, f"{clip.clip_id}.explanation.json")
    with open(json_path, "w") as fh:
        fh.write(record.to_json())
    print(f"wrote {json_path} (class={record.predicted_class} "
          f"p={record.probability:.4f} {record.duration_ms:.2f}ms)")
    if args.render:
        paths = viz.render_clip(clip, np.asarray(record.spatial), record.grid,
                                cfg.out_dir)
        print(f"rendered {len(paths)} frames to {cfg.out_dir}")
    return 0


def cmd_shap(args) -> int:
    cfg = _load_config(args)
    clip = _clip_from_args(args, cfg)
    model = init_model(cfg.model_config())
    predictor = baselines.CountingPredictor(model)
    target = int(np.argmax(predictor.predict(clip)))
    partition = baselines.segment(clip.num_frames, cfg.segments)
    if cfg.shap_mode == "exact":
        result = baselines.shap_exact(predictor, clip, partition, target)
    else:
        result = baselines.shap_monte_carlo(
            predictor, clip, partition, target, cfg.mc_samples, seed=cfg.shap_seed,
            literal=cfg.shap_mode == "monte-carlo-literal")
    payload = {"phi": result.phi.tolist(), "mode": result.mode,
               "K": result.samples, "evals_used": result.evals_used,
               "class": target}
    path = args.out or _out_path(cfg, f"{clip.clip_id}.shap.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"wrote {path} ({result.mode}, {result.evals_used} evals)")
    return 0


def cmd_lime(args) -> int:
    cfg = _load_config(args)
    clip = _clip_from_args(args, cfg)
    model = init_model(cfg.model_config())
    predictor = baselines.CountingPredictor(model)
    result = baselines.lime_spatial(predictor, clip, cfg.lime_frames,
                                    cfg.perturbations, _grid(cfg),
                                    reg=cfg.reg, seed=cfg.lime_seed)
    payload = {"frames": [
        {"index": int(idx), "coefficients": result.coefficients[k].tolist(),
         "intercept": float(result.intercepts[k])}
        for k, idx in enumerate(result.frame_indices)],
        "evals_used": predictor.eval_count}
    path = args.out or _out_path(cfg, f"{clip.clip_id}.lime.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"wrote {path} ({predictor.eval_count} evals)")
    return 0


def _lime_spatial_matrix(result: baselines.LimeResult, patches: int,
                         num_frames: int) -> np.ndarray:
    values = np.zeros((patches, num_frames))
    for k, idx in enumerate(result.frame_indices):
        values[:, idx] = result.importance[k]
    return values


def _method_rankings(model, clip, cfg: RunConfig):
    """Attribution + wall-clock + eval count for each comparison method."""
    grid = _grid(cfg)
    entries = {}

    params_vanilla = attribution.EnhancementParams(lam=cfg.lam, enhance=False)
    params_enh = attribution.EnhancementParams(lam=cfg.lam, enhance=True)
    t0 = time.perf_counter()
    rec_v = attribution.explain(model, clip, params_vanilla)
    t_vanilla = time.perf_counter() - t0
    t0 = time.perf_counter()
    rec_e = attribution.explain(model, clip, params_enh)
    t_enhanced = time.perf_counter() - t0
    entries["STAA (Vanilla)"] = (
        metrics.rank_spatial(np.asarray(rec_v.spatial), grid), t_vanilla, 1)
    entries["STAA (Enhanced)"] = (
        metrics.rank_spatial(np.asarray(rec_e.spatial), grid), t_enhanced, 1)

    predictor = baselines.CountingPredictor(model)
    target = int(np.argmax(predictor.predict(clip)))
    partition = baselines.segment(clip.num_frames, cfg.segments)
    before = predictor.eval_count
    t0 = time.perf_counter()
    shap = baselines.shap_exact(predictor, clip, partition, target)
    t_shap = time.perf_counter() - t0
    entries["SHAP"] = (metrics.rank_segments(shap.phi, partition), t_shap,
                       predictor.eval_count - before)

    before = predictor.eval_count
    t0 = time.perf_counter()
    lime = baselines.lime_spatial(predictor, clip, cfg.lime_frames,
                                  cfg.perturbations, grid, reg=cfg.reg,
                                  seed=cfg.lime_seed)
    t_lime = time.perf_counter() - t0
    values = _lime_spatial_matrix(lime, grid[0] * grid[1], clip.num_frames)
    entries["LIME"] = (metrics.rank_spatial(values, grid), t_lime,
                       predictor.eval_count - before)
    return entries


_TABLE_ORDER = ("SHAP", "LIME", "STAA (Vanilla)", "STAA (Enhanced)")


def _evaluate_clips(model, clips, cfg: RunConfig):
    """Per-method faithfulness, monotonicity, timing over a clip batch."""
    per_method: dict[str, dict] = {m: {"rankings": [], "wall": [], "evals": 0}
                                   for m in _TABLE_ORDER}
    for clip in clips:
        for method, (ranking, wall, evals) in _method_rankings(model, clip, cfg).items():
            per_method[method]["rankings"].append(ranking)
            per_method[method]["wall"].append(wall)
            per_method[method]["evals"] = evals

    scorer = baselines.CountingPredictor(model)
    rows = []
    for method in _TABLE_ORDER:
        data = per_method[method]
        faith = metrics.faithfulness(scorer, clips, data["rankings"],
                                     ratio=cfg.mask_ratio,
                                     mode=cfg.faithfulness_mode)
        taus = []
        for clip, ranking in zip(clips, data["rankings"]):
            try:
                taus.append(metrics.monotonicity(scorer, clip, ranking).tau)
            except StaaError:
                taus.append(float("nan"))
        wall = np.asarray(data["wall"])
        rows.append({
            "method": method,
            "faithfulness": faith.score,
            "monotonicity_mean": float(np.nanmean(taus)) if taus else float("nan"),
            "monotonicity_std": float(np.nanstd(taus)) if taus else float("nan"),
            "wall_mean_s": float(wall.mean()),
            "wall_std_s": float(wall.std()),
            "evals": data["evals"],
        })
    return rows


def _format_table(rows) -> str:
    lines = [f"{'Method':<16} {'Faithfulness':>13} {'Monotonicity':>20} "
             f"{'Time (s)':>16} {'Evals':>8}"]
    for r in rows:
        mono = f"{r['monotonicity_mean']:.3f} ± {r['monotonicity_std']:.3f}"
        tm = f"{r['wall_mean_s']:.4f} ± {r['wall_std_s']:.4f}"
        lines.append(f"{r['method']:<16} {r['faithfulness']:>13.3f} {mono:>20} "
                     f"{tm:>16} {r['evals']:>8d}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    model = init_model(cfg.model_config())
    clips = []
    if args.clip:
        clips.append(read_raw_clip(args.clip, cfg.frames, cfg.height, cfg.width))
    while len(clips) < max(args.count, 2):
        clips.append(generate_clip(ClipSpec(
            cfg.frames, cfg.height, cfg.width,
            seed=cfg.clip_seed + len(clips), pattern=cfg.pattern)))
    rows = _evaluate_clips(model, clips, cfg)
    print(_format_table(rows))
    runs = [metrics.MethodRun(r["method"], tuple([r["wall_mean_s"]]), r["evals"])
            for r in rows]
    print(metrics.cost_report(runs))
    path = _out_path(cfg, "compare.json")
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = init_model(cfg.model_config())
    clip_files = sorted(
        os.path.join(args.clip_dir, f) for f in os.listdir(args.clip_dir)
        if f.endswith(".rgb"))
    if not clip_files:
        raise FormatError(f"no .rgb clips found in {args.clip_dir}")
    clips = [read_raw_clip(p, cfg.frames, cfg.height, cfg.width) for p in clip_files]
    rows = _evaluate_clips(model, clips, cfg)
    print(f"evaluated {len(clips)} clips")
    print(_format_table(rows))
    path = _out_path(cfg, "eval.json")
    with open(path, "w") as fh:
        json.dump({"clips": len(clips), "rows": rows}, fh, indent=2)
    print(f"wrote {path}")
    return 0


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    cfg = _load_config(args)
    model = init_model(cfg.model_config())
    host, port = _parse_address(args.bind)
    params = attribution.EnhancementParams(lam=cfg.lam, enhance=cfg.enhance)
    server = service.ExplanationServer(model, params, host=host, port=port,
                                       queue_capacity=args.queue_cap)
    server.start()
    bound = server.address
    print(f"serving on {bound[0]}:{bound[1]} (queue capacity {args.queue_cap})",
          flush=True)
    server.wait()
    print(f"shutdown: processed={server.processed} dropped={server.dropped}")
    return 0


def cmd_stream(args) -> int:
    cfg = _load_config(args)
    clip = _clip_from_args(args, cfg)
    log = service.stream_client(_parse_address(args.connect), clip,
                                batch_size=args.batch, repeats=args.repeats)
    ok = [r for r in log.records if not r.dropped]
    print(f"{len(ok)} explanations, {log.drop_count} dropped")
    if ok:
        lat = np.sort(np.asarray(log.latencies_ms))
        print(" ".join(f"p{int(q*100)}={viz.percentile(lat, q):.2f}ms"
                       for q in (0.5, 0.95, 0.99)))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    cdf_path = args.cdf or _out_path(cfg, "latency_cdf.csv")
    if args.connect:
        clip = _clip_from_args(args, cfg)
        log = service.stream_client(_parse_address(args.connect), clip,
                                    batch_size=cfg.frames, repeats=args.batches)
        lat = log.latencies_ms
        if not lat:
            print("no samples collected", file=sys.stderr)
            return 4
        summary = viz.emit_cdf(lat, cdf_path) + f" drops={log.drop_count}"
    else:
        model = init_model(cfg.model_config())
        _, summary = service.bench_latency(model, args.batches, cdf_path=cdf_path,
                                           queue_capacity=args.queue_cap)
    print(summary)
    print(f"wrote {cdf_path}")
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    clip = _clip_from_args(args, cfg)
    with open(args.explanation) as fh:
        record = attribution.ExplanationRecord.from_json(fh.read())
    paths = viz.render_clip(clip, np.asarray(record.spatial),
                            tuple(record.grid), cfg.out_dir,
                            cmap=args.colormap, alpha=args.alpha)
    print(f"rendered {len(paths)} frames to {cfg.out_dir}")
    return 0


def cmd_dump_config(args) -> int:
    cfg = _load_config(args)
    cfg.dump(args.out)
    print(f"wrote {args.out}")
    return 0


def _add_clip_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--clip", help="raw .rgb clip file (dimensions from flags)")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="clip generator seed")
    p.add_argument("--pattern", default=None, choices=videoio.PATTERNS)


def _add_baseline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--perturbations", type=int, default=None)
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--lime-frames", type=int, default=None, dest="lime_frames")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--model-seed", type=int, default=None, dest="model_seed")
    p.add_argument("--out-dir", default=None, dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="staa",
        description="Attention attribution for video transformers: explain, "
                    "compare against SHAP/LIME, evaluate, serve, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic raw clip")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("explain", help="single-pass attention attribution")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--render", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("shap", help="Shapley attribution over temporal segments")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--mc-samples", type=int, default=None, dest="mc_samples")
    p.add_argument("--shap-mode", default=None, dest="shap_mode",
                   choices=("exact", "monte-carlo", "monte-carlo-literal"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("lime", help="linear-surrogate spatial attribution")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--perturbations", type=int, default=None)
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--lime-frames", type=int, default=None, dest="lime_frames")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lime)

    p = sub.add_parser("compare", help="side-by-side method comparison table")
    _add_common(p); _add_clip_flags(p); _add_baseline_flags(p)
    p.add_argument("--count", type=int, default=4, help="generated clips to use")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="batch metric evaluation over a clip directory")
    _add_common(p); _add_clip_flags(p); _add_baseline_flags(p)
    p.add_argument("--clip-dir", required=True, dest="clip_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the streaming explanation server")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1:7341")
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--queue-cap", type=int, default=16, dest="queue_cap")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stream", help="stream a clip to a server, log latency")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--connect", required=True)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="latency benchmark with CDF output")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--connect", help="existing server; loopback if omitted")
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--queue-cap", type=int, default=16, dest="queue_cap")
    p.add_argument("--cdf", help="CDF CSV output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="overlay heatmaps from an explanation JSON")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--explanation", required=True)
    p.add_argument("--colormap", default="red-blue", choices=viz.COLORMAPS)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("dump-config", help="write the effective config file")
    _add_common(p); _add_clip_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ProtocolError as exc:
        print(f"protocol error [{exc.code}]: {exc}", file=sys.stderr)
        return 4
    except StaaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
