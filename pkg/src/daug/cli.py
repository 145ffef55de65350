"""Command-line entry point: ``daug {gen,extract,augment,validate,bench}``.

Exit codes: 0 success, 1 augmentation shortfall or failed validation,
2 configuration error, 3 data-integrity error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError, DaugError, DataIntegrityError
from .extraction import DEFAULT_MIN_POINTS, build_object_bank, category_histogram, read_bank, write_bank
from .insertion import DEFAULT_NUM_OBJECTS, AugmentationPlan, augment_scene
from .maps import DEFAULT_RESOLUTION, bench_road_lookup, pixelize
from .scene_io import dump_json, find_manifests, load_json, read_layers, read_manifest, read_raster, read_scene_map, write_manifest
from .validate import validate_scene

log = logging.getLogger("daug")

EXIT_OK, EXIT_SHORTFALL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


@dataclass(frozen=True)
class Config:
    seed: int = 0
    num_objects: int = DEFAULT_NUM_OBJECTS
    search_radius: float = 10.0
    attempts_per_reference: int = 32
    horizon: int | None = None
    margin: float = 0.5
    strict_road: bool = False
    workers: int = 1
    allow_empty: bool = False
    categories: tuple[str, ...] | None = None
    min_points: int = DEFAULT_MIN_POINTS
    dedup: bool = True

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def plan(self, seed: int) -> AugmentationPlan:
        return AugmentationPlan(
            seed=seed,
            num_objects=self.num_objects,
            search_radius=self.search_radius,
            attempts_per_reference=self.attempts_per_reference,
            collision_horizon=self.horizon,
            collision_margin=self.margin,
            strict_road=self.strict_road,
        )


def _parse_horizon(value: Any) -> int | None:
    if value is None or value == "all":
        return None
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"horizon must be an integer or 'all', got {value!r}") from exc


def resolve_config(args: argparse.Namespace) -> Config:
    """Defaults, then the --config file, then explicit flags."""
    values: dict[str, Any] = {}
    known = {f.name for f in fields(Config)}
    if getattr(args, "config", None):
        doc = load_json(args.config)
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        values.update(doc)
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if "horizon" in values:
        values["horizon"] = _parse_horizon(values["horizon"])
    if isinstance(values.get("categories"), str):
        values["categories"] = tuple(c for c in values["categories"].split(",") if c)
    elif values.get("categories") is not None:
        values["categories"] = tuple(values["categories"])
    return Config(**values)


def derive_seed(master: int, scene_id: str) -> int:
    digest = hashlib.sha256(f"{master}:{scene_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# --- gen ----------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    from .synth import CorpusSpec, SynthSpec, generate, synth_raster, write_corpus, write_scene_dir

    doc = load_json(args.spec)
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
    if "num_scenes" in doc:
        paths = write_corpus(CorpusSpec.from_dict(doc), args.out)
    else:
        spec = SynthSpec.from_dict(doc)
        scene, layers, _ = generate(spec)
        paths = [write_scene_dir(Path(args.out) / spec.scene_id, scene, layers, synth_raster(layers, spec.resolution))]
    print(f"wrote {len(paths)} scene(s) to {args.out}")
    return EXIT_OK


# --- extract --------------------------------------------------------------------

def _extract_one(path: Path, config: Config):
    scene = read_manifest(path)
    return build_object_bank([scene], config.categories, config.min_points, config.dedup)


def cmd_extract(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    manifests = find_manifests(args.scenes)
    errors: list[str] = []
    bank = []
    with _executor(config.workers) as pool:
        futures = [(p, pool.submit(_extract_one, p, config)) for p in manifests]
        for path, future in futures:
            try:
                bank.extend(future.result())
            except (DaugError, OSError) as exc:
                errors.append(f"{path}: {exc}")
    if not manifests:
        log.warning("no scenes found under %s", args.scenes)
    bank.sort(key=lambda o: o.source)
    write_bank(bank, args.bank)
    print(f"bank entries: {len(bank)}")
    for category, count in category_histogram(bank).items():
        print(f"  {category:<16} {count}")
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_DATA if errors else EXIT_OK


# --- augment ----------------------------------------------------------------------

class _SerialExecutor:
    """Same interface as a pool, runs tasks inline."""

    class _Done:
        def __init__(self, fn, *a):
            try:
                self._value, self._exc = fn(*a), None
            except BaseException as exc:  # re-raised from result(), like a real future
                self._value, self._exc = None, exc

        def result(self):
            if self._exc is not None:
                raise self._exc
            return self._value

    def submit(self, fn, *a):
        return self._Done(fn, *a)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _executor(workers: int):
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else _SerialExecutor()


def _augment_one(path: Path, scenes_root: Path, out_root: Path, bank_dir: Path, config: Config) -> dict[str, Any]:
    scene = read_manifest(path)
    raster = read_scene_map(scene)
    bank = read_bank(bank_dir)
    plan = config.plan(derive_seed(config.seed, scene.id))
    if scene.map_ref and "crop_half_extent_m" in scene.map_ref:
        plan = replace(plan, crop_half_extent=float(scene.map_ref["crop_half_extent_m"]))
    augmented, report = augment_scene(scene, bank, raster, plan)
    rel = path.parent.relative_to(scenes_root) if path.parent != scenes_root else Path(scene.id)
    out_dir = out_root / rel
    write_manifest(augmented, out_dir / "manifest.json")
    for key in ("grid_file", "meta_file", "layers_file"):
        src = scene.map_path(key)
        if src is not None and src.exists():
            dst = out_dir / scene.map_ref[key]
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
    # worker count never changes output bytes, so it stays out of the echo
    report["config"] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in asdict(config).items() if k != "workers"}
    dump_json(report, out_dir / "report.json")
    return {"scene_id": scene.id, "placements": len(report["placements"]), "failures": len(report["failures"])}


def cmd_augment(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    config.plan(config.seed)  # surface plan errors as configuration errors before any work
    bank_dir = Path(args.bank)
    bank = read_bank(bank_dir)
    if not bank:
        print(f"error: object bank {bank_dir} is empty", file=sys.stderr)
        return EXIT_CONFIG
    scenes_root = Path(args.scenes)
    manifests = find_manifests(scenes_root)
    if not manifests:
        print(f"error: no scenes under {scenes_root}", file=sys.stderr)
        return EXIT_CONFIG
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    summaries, errors = [], []
    with _executor(config.workers) as pool:
        futures = [(p, pool.submit(_augment_one, p, scenes_root, out_root, bank_dir, config)) for p in manifests]
        for path, future in futures:
            try:
                summaries.append(future.result())
            except (DaugError, OSError) as exc:
                errors.append(f"{path}: {exc}")
    short = [s for s in summaries if s["placements"] == 0]
    for s in summaries:
        print(f"{s['scene_id']}: {s['placements']} placed, {s['failures']} failed")
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    if errors:
        return EXIT_DATA
    if short and not config.allow_empty:
        print(f"{len(short)} scene(s) received no objects", file=sys.stderr)
        return EXIT_SHORTFALL
    return EXIT_OK


# --- validate -----------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    manifests = find_manifests(args.path)
    if not manifests:
        print(f"error: no scenes under {args.path}", file=sys.stderr)
        return EXIT_CONFIG
    failed = False
    for path in manifests:
        try:
            scene = read_manifest(path)
            raster = read_scene_map(scene)
        except (DaugError, OSError) as exc:
            print(f"{path}: data-integrity error: {exc}", file=sys.stderr)
            return EXIT_DATA
        result = validate_scene(scene, raster)
        status = "ok" if result.ok else "FAIL"
        print(f"{scene.id}: {status} ({result.inserted_tracks} inserted tracks)")
        for v in result.violations:
            print(f"  {v.invariant} violation: track {v.track_id} frame {v.frame}: {v.detail}")
        for note in result.unverified:
            print(f"  unverified: {note}")
        failed |= not result.ok
    return EXIT_SHORTFALL if failed else EXIT_OK


# --- bench --------------------------------------------------------------------------

def cmd_bench(args: argparse.Namespace) -> int:
    if args.layers:
        layers = read_layers(args.layers)
    else:
        from .synth import grid_city

        layers = grid_city(blocks=args.blocks)
    if args.map_grid and args.map_meta:
        raster = read_raster(args.map_grid, args.map_meta)
    else:
        from .synth import map_bounds

        raster = pixelize(layers, DEFAULT_RESOLUTION, map_bounds(layers, DEFAULT_RESOLUTION))
    road_polygons = sum(1 for l in layers.layers if l.category == "road")
    pixel, polygon = bench_road_lookup(raster, layers, args.queries, seed=args.seed or 0)
    print(f"polygons: {len(layers)} ({road_polygons} road), resolution {raster.resolution} m/px, queries {args.queries}")
    print(f"{'method':<18}{'percall (s)':>14}{'cumtime (s)':>14}")
    print(f"{'layer filtering':<18}{polygon:>14.6f}{polygon * args.queries:>14.4f}")
    print(f"{'pixel-level':<18}{pixel:>14.6f}{pixel * args.queries:>14.4f}")
    print(f"speedup: {polygon / pixel:.1f}x")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daug", description="Dynamic-scene LiDAR object augmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("gen", help="write a synthetic corpus")
    p.add_argument("--spec", required=True, help="synth or corpus spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="build an object bank")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--categories", help="comma-separated category filter")
    p.add_argument("--min-points", dest="min_points", type=int)
    p.add_argument("--no-dedup", dest="dedup", action="store_const", const=False)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("augment", help="insert bank objects into scenes")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-objects", dest="num_objects", type=int)
    p.add_argument("--search-radius", dest="search_radius", type=float)
    p.add_argument("--attempts", dest="attempts_per_reference", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--horizon", help="frames after insertion, or 'all'")
    p.add_argument("--strict-road", dest="strict_road", action="store_const", const=True)
    p.add_argument("--allow-empty", dest="allow_empty", action="store_const", const=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("validate", help="re-check scene invariants")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="time pixel-level vs polygon road lookup")
    p.add_argument("--map-grid")
    p.add_argument("--map-meta")
    p.add_argument("--layers")
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--blocks", type=int, default=10, help="grid-city size when no layers are given")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DAUG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataIntegrityError as exc:
        print(f"data-integrity error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
