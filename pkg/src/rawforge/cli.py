"""Command-line entry point: ``rawforge <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Settings resolve as command-line flag, then ``--config`` JSON file, then the
built-in default; the resolved values are echoed in every report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, RawforgeError
from .io import dumps_json, read_json, read_linear_rgb, read_png16, read_raw, write_json, write_png16

log = logging.getLogger("rawforge")

ISO_SET = (50, 100, 200, 400, 800, 1600, 3200)

DEFAULTS = {
    "gen-patterns": {"width": 1920, "height": 1080, "count": 20, "seed": 0, "levels": 255, "rows": 3, "cols": 6,
                     "spokes": 20, "cell": 256, "inverse": False},
    "align": {"scale": 4, "support": 21, "min_contrast": 0.05, "ransac": True, "threshold": 1.0, "roi": None,
              "match_histogram": True},
    "calibrate-kernels": {"patch_size": None, "scale": None, "batch": 20, "iterations": 2000, "support": None,
                          "lr_kernel": 1e-3, "lr_homography": 1e-3, "homography_warmup": 100, "seed": 0,
                          "workers": 1, "grid": None, "camera": None},
    "calibrate-noise": {"isos": None, "weighting": "inverse_variance", "camera": None},
    "synthesize": {"count": 0, "patch_size": 256, "scale": 4, "seed": 0, "workers": 1, "exclude": [],
                   "kernels": [], "noise": [], "iso_sampler": "log-uniform", "clip": False},
    "evaluate": {"spokes": 20, "mode": "both", "channel": "mean", "peak": 1.0},
}


class UsageError(ConfigError):
    pass


def _csv(cast):
    def parse(text):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with settings for this subcommand")
    p.add_argument("--out", type=Path, help="write the JSON report here instead of stdout")
    p.add_argument("--log-level", help="overrides RAWFORGE_LOG (DEBUG, INFO, WARNING, ...)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rawforge", description="Device-specific SR degradation calibration and "
                                 "synthetic RAW pair generation.")
    ap.add_argument("--version", action="version", version=f"rawforge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("gen-patterns", help="write display patterns and a manifest", argument_default=S)
    p.add_argument("kind", choices=["graycode", "steps", "colors", "random", "siemens"])
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--spokes", type=int)
    p.add_argument("--cell", type=int)
    p.add_argument("--inverse", action="store_true")
    _add_common(p)

    p = sub.add_parser("align", help="decode gray codes into a homography, or align a ground truth to a capture",
                       argument_default=S)
    p.add_argument("--graycode", type=Path, help="manifest of gray-code captures (decode mode)")
    p.add_argument("--gt", type=Path, help="ground-truth linear RGB image (reference mode)")
    p.add_argument("--capture", type=Path, help="RAW capture (.pgm + sidecar)")
    p.add_argument("--homography", type=Path)
    p.add_argument("--profile", type=Path)
    p.add_argument("--scale", type=int)
    p.add_argument("--support", type=int, help="kernel support; sets the HR margin of homography_hr.json")
    p.add_argument("--roi", type=_csv(int), help="x,y,width,height in capture pixels")
    p.add_argument("--min-contrast", type=float)
    p.add_argument("--no-ransac", dest="ransac", action="store_false")
    p.add_argument("--threshold", type=float)
    p.add_argument("--no-histogram-match", dest="match_histogram", action="store_false")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("calibrate-kernels", help="estimate SR kernels per FOV patch", argument_default=S)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--support", type=int)
    p.add_argument("--lr-kernel", type=float)
    p.add_argument("--lr-homography", type=float)
    p.add_argument("--homography-warmup", type=int, help="iterations before the homography is refined")
    p.add_argument("--grid", type=_csv(int), help="rows,cols of FOV patches")
    p.add_argument("--camera")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    _add_common(p)

    p = sub.add_parser("calibrate-noise", help="fit HG noise parameters per ISO and channel", argument_default=S)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--isos", type=_csv(float))
    p.add_argument("--weighting", choices=["counts", "inverse_variance"])
    p.add_argument("--camera")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("synthesize", help="generate LR RAW / HR pairs", argument_default=S)
    p.add_argument("--input-dir", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--profile", type=Path)
    p.add_argument("--kernels", type=Path, action="append", help="kernel-set directory (repeatable)")
    p.add_argument("--noise", type=Path, action="append", help="noise model JSON (repeatable)")
    p.add_argument("--exclude", type=_csv(str), help="comma-separated camera names to leave out")
    p.add_argument("--count", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--iso-sampler", choices=["log-uniform", "uniform"])
    p.add_argument("--clip", action="store_true")
    _add_common(p)

    p = sub.add_parser("evaluate", help="MTF from Siemens stars or PSNR/SSIM on paired data", argument_default=S)
    p.add_argument("--mtf", type=Path, help="star-grid image")
    p.add_argument("--lr-mtf", type=Path, help="LR baseline star-grid image for relative MTF")
    p.add_argument("--grid", type=Path, help="centres manifest from gen-patterns siemens")
    p.add_argument("--spokes", type=int)
    p.add_argument("--channel")
    p.add_argument("--paired", type=Path, help="directory of NNN_pred / NNN_gt pairs")
    p.add_argument("--mode", choices=["raw-packed", "rgb", "both"])
    p.add_argument("--peak", type=float)
    _add_common(p)
    return ap


def resolve(command: str, args: argparse.Namespace) -> dict:
    """CLI flag > config file > default."""
    cfg = dict(DEFAULTS.get(command, {}))
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "log_level")}
    if getattr(args, "config", None):
        try:
            data = read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        section = data.get(command, data) if isinstance(data, dict) else None
        if not isinstance(section, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(section) - set(cfg) - set(cli) - _PATH_KEYS.get(command, set())
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(section)
    cfg.update(cli)
    return cfg


_PATH_KEYS = {
    "synthesize": {"input_dir", "out_dir", "profile"},
    "align": {"graycode", "gt", "capture", "homography", "profile", "out_dir"},
    "evaluate": {"mtf", "lr_mtf", "grid", "paired"},
    "calibrate-kernels": {"manifest", "out_dir"},
    "calibrate-noise": {"manifest", "out_dir"},
    "gen-patterns": {"out_dir"},
}


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, [], "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _path(cfg, key, base: Path | None = None) -> Path:
    p = Path(cfg[key])
    return p if p.is_absolute() or base is None else base / p


def _jsonable(cfg):
    return {k: (str(v) if isinstance(v, Path) else [str(x) if isinstance(x, Path) else x for x in v]
                if isinstance(v, list) else v) for k, v in cfg.items()}


# ---------------------------------------------------------------- subcommands


def cmd_gen_patterns(cfg: dict) -> dict:
    from . import patterns as pt

    out = Path(cfg["out_dir"])
    kind = cfg["kind"]
    w, h = cfg["width"], cfg["height"]
    report = {"kind": kind, "files": []}
    if kind == "siemens":
        img, centers = pt.gen_siemens_grid(cfg["rows"], cfg["cols"], cfg["spokes"], cfg["cell"])
        path = out / "siemens.png"
        write_png16(path, img)
        report["files"].append(path.name)
        report["centers"] = [list(c) for c in centers]
        report["spokes"] = cfg["spokes"]
        report["cell"] = cfg["cell"]
        write_json(out / "manifest.json", report)
        return report
    if kind == "graycode":
        seqs = [pt.gen_gray_code(w, h, "x", cfg["inverse"]), pt.gen_gray_code(w, h, "y", cfg["inverse"])]
        report["bits"] = {"x": seqs[0].meta["bits"], "y": seqs[1].meta["bits"]}
        report["inverse"] = cfg["inverse"]
        report["bit_order"] = "msb_first"
    elif kind == "steps":
        seqs = [pt.gen_gray_steps(cfg["levels"], w, h)]
    elif kind == "colors":
        seqs = [pt.gen_color_patches(None, w, h)]
    else:
        seqs = [pt.gen_random_structures(cfg["count"], w, h, cfg["seed"])]
    for seq in seqs:
        tag = seq.kind.value
        for i in range(len(seq)):
            path = out / f"{tag}_{i:03d}.png"
            write_png16(path, seq.frame(i))
            report["files"].append(path.name)
    report["width"], report["height"] = w, h
    report["count"] = len(report["files"])
    write_json(out / "manifest.json", report)
    return report


def _load_profile(path):
    from .image import CameraProfile

    return CameraProfile.from_dict(read_json(path))


def _read_capture(path):
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return read_raw(p)
    return read_png16(p)


def cmd_align(cfg: dict) -> dict:
    from .alignment import align_reference, decode_gray_code, fit_homography
    from .alignment.homography import Homography

    out = Path(cfg["out_dir"])
    if cfg.get("graycode"):
        man_path = Path(cfg["graycode"])
        man = read_json(man_path)
        base = man_path.parent
        caps = [_read_capture(base / f) for f in man["captures"]]
        corr = decode_gray_code(caps, _read_capture(base / man["white"]), _read_capture(base / man["black"]),
                                int(man["display_width"]), int(man["display_height"]), cfg["min_contrast"],
                                bool(man.get("inverse", False)))
        if len(corr) < 4:
            raise RawforgeError(f"only {len(corr)} decodable pixels; check exposure and contrast")
        h = fit_homography(corr, ransac=cfg["ransac"], threshold=cfg["threshold"])
        write_json(out / "homography.json", h.to_dict())
        # LR pixel i sits at HR index margin + scale * i on the full-frame HR grid.
        s, m = cfg["scale"], cfg["support"] // 2
        h_hr = Homography(np.array([[s, 0, m], [0, s, m], [0, 0, 1]], dtype=np.float64)) @ h
        write_json(out / "homography_hr.json", h_hr.to_dict())
        return {"mode": "graycode", "correspondences": len(corr), "homography": h.h.tolist(),
                "homography_hr": h_hr.h.tolist(),
                "mean_confidence": float(corr.confidence.mean())}
    _require(cfg, "gt", "capture", "homography", "profile")
    profile = _load_profile(cfg["profile"])
    capture = read_raw(cfg["capture"])
    h = Homography.from_dict(read_json(cfg["homography"]))
    pair = align_reference(read_linear_rgb(cfg["gt"]), capture, profile, h, cfg["scale"], cfg["roi"],
                           match_histogram=cfg["match_histogram"])
    write_png16(out / "aligned_gt.png", np.clip(pair.gt, 0, 1))
    write_png16(out / "roi.png", np.clip(pair.roi, 0, 1))
    return {"mode": "reference", "roi": list(pair.roi_box), "gt_shape": list(pair.gt.shape),
            "valid_fraction": float(pair.mask.mean())}


def _average_dir(d: Path):
    from .kernels import average_burst

    files = sorted(d.glob("*.pgm"))
    if not files:
        raise ConfigError(f"no .pgm captures in {d}")
    return average_burst([read_raw(f) for f in files])


def cmd_calibrate_kernels(cfg: dict) -> dict:
    from .alignment.homography import Homography
    from .kernels import FlatFields, KernelEstimationConfig, estimate_fov_grid, split_fov
    from .radiometric import field_to_hr_grid

    man_path = Path(cfg["manifest"])
    man = read_json(man_path)
    base = man_path.parent
    entries = man.get("captures", [])
    if not entries:
        raise ConfigError(f"{man_path} lists no captures")
    # Geometry: flag or config file, then the manifest, then the default.
    for key, fallback in (("patch_size", 128), ("scale", 4), ("support", 21)):
        if cfg.get(key) is None:
            cfg[key] = int(man.get(key, fallback))
    kcfg = KernelEstimationConfig(batch_size=cfg["batch"], iterations=cfg["iterations"],
                                  lr_kernel=cfg["lr_kernel"], lr_homography=cfg["lr_homography"],
                                  homography_warmup=cfg["homography_warmup"],
                                  patch_size=cfg["patch_size"], scale=cfg["scale"], support=cfg["support"],
                                  seed=cfg["seed"])
    entries = entries[: kcfg.batch_size]
    profile = _load_profile(base / man["profile"]) if man.get("profile") else None
    cfa = profile.cfa if profile else "RGGB"
    measured = [_average_dir(base / e["burst"]) for e in entries]
    displayed = [read_png16(base / e["pattern"]) for e in entries]
    white = _average_dir(base / man["white"])
    black = _average_dir(base / man["black"])
    lr_h, lr_w = measured[0].data.shape
    hr_shape = (kcfg.scale * lr_h + 2 * kcfg.margin, kcfg.scale * lr_w + 2 * kcfg.margin)
    fields = FlatFields(field_to_hr_grid(white, kcfg.scale, hr_shape, kcfg.margin),
                        field_to_hr_grid(black, kcfg.scale, hr_shape, kcfg.margin))
    h = Homography.from_dict(read_json(base / man["homography"]))
    grid = cfg.get("grid") or man.get("grid")
    patches = split_fov(measured, displayed, h, fields, kcfg, tuple(grid) if grid else None)
    camera = cfg.get("camera") or (profile.name if profile else "")
    res = estimate_fov_grid(patches, kcfg, cfa, camera, cfg["workers"])
    out = Path(cfg["out_dir"])
    files = []
    for ks in res.kernel_sets:
        r, c = ks.patch_index
        path = out / f"kernels_r{r:02d}_c{c:02d}.f32"
        ks.save(path)
        files.append(path.name)
    report = res.report()
    report["files"] = files
    resid = [k.residual for k in res.kernel_sets]
    report["max_residual"] = max(resid) if resid else None
    report["config"] = kcfg.to_dict()
    write_json(out / "summary.json", report)
    return report


def cmd_calibrate_noise(cfg: dict) -> dict:
    from .image import CameraProfile
    from .noise import build_noise_model, estimate_hg_params

    man_path = Path(cfg["manifest"])
    man = read_json(man_path)
    base = man_path.parent
    bursts = {float(k): v for k, v in man.get("bursts", {}).items()}
    isos = cfg.get("isos") or sorted(bursts)
    missing = [i for i in isos if i not in bursts]
    if missing:
        raise ConfigError(f"manifest has no burst for ISO {missing}")
    regions = [tuple(int(v) for v in r) for r in man.get("regions", [])]
    if not regions:
        raise ConfigError("manifest lists no homogeneous regions")
    params = {}
    for iso in isos:
        files = sorted((base / bursts[iso]).glob("*.pgm"))
        params[iso] = estimate_hg_params([read_raw(f) for f in files], regions, cfg["weighting"])
    profile = CameraProfile.from_dict(read_json(base / man["profile"])) if man.get("profile") else None
    camera = cfg.get("camera") or man.get("camera") or (profile.name if profile else "")
    model = build_noise_model(params, camera)
    out = Path(cfg["out_dir"])
    doc = {"camera": camera, "profile": profile.to_dict() if profile else None, "noise_model": model.to_dict()}
    write_json(out / "noise_model.json", doc)
    return {"camera": camera, "isos": isos, "file": "noise_model.json",
            "params": {str(iso): {ch: p.to_dict() for ch, p in per.items()} for iso, per in params.items()}}


def cmd_synthesize(cfg: dict) -> dict:
    from .synthesis import SynthConfig, batch_synthesize, pool_from_calibration

    _require(cfg, "input_dir", "out_dir", "profile", "kernels", "noise")
    profile = _load_profile(cfg["profile"])
    pool = pool_from_calibration(cfg["kernels"], cfg["noise"], cfg["exclude"], cfg["iso_sampler"], cfg["seed"])
    scfg = SynthConfig(cfg["count"], cfg["patch_size"], cfg["scale"], cfg["seed"], cfg["workers"], cfg["clip"])
    manifest = batch_synthesize(cfg["input_dir"], profile, pool, scfg, cfg["out_dir"])
    return {"count": manifest["count"], "pool_cameras": manifest["pool_cameras"],
            "excluded": sorted(cfg["exclude"]), "manifest": str(Path(cfg["out_dir"]) / "manifest.json")}


def _load_pairs(d: Path):
    preds = sorted(list(d.glob("*_pred.pgm")) + list(d.glob("*_pred.png")) + list(d.glob("*_pred.f32")))
    pairs = []
    for p in preds:
        stem = p.name[: -len("_pred" + p.suffix)]
        g = p.with_name(f"{stem}_gt{p.suffix}")
        if not g.exists():
            raise ConfigError(f"no ground truth for {p.name}")
        load = read_raw if p.suffix == ".pgm" else read_linear_rgb
        a, b = load(p), load(g)
        if p.suffix == ".pgm":
            from .image import normalize_raw

            a, b = normalize_raw(a), normalize_raw(b)
        pairs.append((a, b))
    if not pairs:
        raise ConfigError(f"no *_pred files in {d}")
    return pairs


def cmd_evaluate(cfg: dict) -> dict:
    from .evaluation import compute_mtf, evaluate_pair_set, summarize_mtf_grid

    report = {}
    if cfg.get("mtf"):
        _require(cfg, "grid")
        grid = read_json(cfg["grid"])
        centers = grid["centers"]
        spokes = int(grid.get("spokes", cfg["spokes"]))
        cell = grid.get("cell")

        def curves(path):
            img = read_linear_rgb(path) if Path(path).suffix.lower() != ".pgm" else read_raw(path).data
            outer = None if cell is None else 0.45 * cell - 2
            return [compute_mtf(img, c, spokes, channel=cfg["channel"], outer_radius=outer) for c in centers]

        sr = curves(cfg["mtf"])
        lr = curves(cfg["lr_mtf"]) if cfg.get("lr_mtf") else sr
        report["mtf"] = summarize_mtf_grid(sr, lr)
        report["mtf"]["curves"] = [c.to_dict() for c in sr]
    if cfg.get("paired"):
        pairs = _load_pairs(Path(cfg["paired"]))
        modes = ("raw-packed", "rgb") if cfg["mode"] == "both" else (cfg["mode"],)
        if not all(isinstance(a, type(pairs[0][0])) for a, _ in pairs):
            raise ConfigError("mixed pair formats")
        if not hasattr(pairs[0][0], "cfa"):
            modes = tuple(m for m in modes if m == "rgb") or ("rgb",)
        report["paired"] = {m: evaluate_pair_set(pairs, m, cfg["peak"]) for m in modes}
    if not report:
        raise UsageError("evaluate needs --mtf and/or --paired")
    return report


COMMANDS = {
    "gen-patterns": cmd_gen_patterns,
    "align": cmd_align,
    "calibrate-kernels": cmd_calibrate_kernels,
    "calibrate-noise": cmd_calibrate_noise,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
}


def _setup_logging(level_name):
    level_name = (level_name or os.environ.get("RAWFORGE_LOG") or "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {level_name!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _setup_logging(getattr(args, "log_level", None))
        cfg = resolve(args.command, args)
        report = COMMANDS[args.command](cfg)
        report = {"command": args.command, "version": __version__, "effective_config": _jsonable(cfg), **report}
        text = dumps_json(report)
        if getattr(args, "out", None):
            write_json(args.out, report)
        else:
            sys.stdout.write(text + "\n")
        return 0
    except (ConfigError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"rawforge {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RawforgeError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        log.debug("failure", exc_info=True)
        print(f"rawforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
