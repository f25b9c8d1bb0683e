"""Command-line interface: ``leica score | metaeval | perturb | rank | synth | stability``.

Reports are deterministic JSON (sorted keys) or CSV.  Wall-clock details go
to a sidecar ``<out>.log`` only, so equal arguments give byte-identical reports.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import DataError, FileFormatError, InvalidSpecError, LeicaError, VocabularyMismatchError
from .imageio import read_ppm, write_ppm
from .likelihood import Caption, CountModel, UniformBackend
from .metaeval import (cell_seed, meta_evaluate, noise_ladder_experiment, stability_sweep,
                       word_replacement_experiment)
from .metric import H_ABLATIONS, LeicaConfig, Models, Sample, leica_score, score_batch
from .perceptual import DEFAULT_LAMBDA, CodePrior, PerceptualConfig, parse_lambda
from .perturb import (DEFAULT_LADDERS, DEFAULT_MIRROR_AMPLITUDE, IMAGE_KINDS, K_LADDER, DistortionSpec,
                      TextPerturbSpec, distort_image, perturb_text)
from .semantic import ExternalMatcher, SemanticConfig
from .synthworld import (DEFAULT_DIM, DEFAULT_K, DEFAULT_PATCH, DEFAULT_SIZE, FIT_SEEDS, OracleMatcher,
                         all_scenes, build_oracles, keyword_lexicon, random_scenes, render,
                         replacement_vocabulary)
from .tokenizer import Codebook, PatchEncoder, Tokenizer

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("leica")


class ConfigError(LeicaError):
    """Bad flags or unusable model files."""


# -- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    text: str
    image: str
    model: str | None = None
    tags: tuple[str, ...] = ()

    def sample(self) -> Sample:
        return Sample(self.id, self.text, image_path=self.image)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """JSONL, one entry per line; image paths are relative to the manifest."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    entries, seen = [], set()
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            eid, text, image = str(obj["id"]), str(obj["text"]), str(obj["image"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: bad manifest entry ({exc})") from exc
        if eid in seen:
            raise DataError(f"{path}:{n}: duplicate id {eid!r}")
        seen.add(eid)
        tags = obj.get("tags") or []
        if not isinstance(tags, list):
            raise DataError(f"{path}:{n}: tags must be a list")
        img = Path(image)
        entries.append(ManifestEntry(eid, text, str(img if img.is_absolute() else base / img),
                                     obj.get("model"), tuple(map(str, tags))))
    if not entries:
        raise DataError(f"empty manifest: {path}")
    return entries


def write_manifest(path: Path, rows: Sequence[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


# -- models -------------------------------------------------------------------

MODEL_FILES = ("config.json", "codebook.bin", "prior.bin", "estimator.bin", "matcher.bin")


def load_models(args) -> tuple[Models, dict]:
    d = Path(args.models)
    need = MODEL_FILES if args.matcher_cmd is None else MODEL_FILES[:-1]
    missing = [f for f in need if not (d / f).is_file()]
    if args.backend == "uniform":
        missing = [f for f in missing if f != "estimator.bin"]
    if missing:
        raise ConfigError(f"models directory {d} lacks {', '.join(missing)}")
    try:
        conf = json.loads((d / "config.json").read_text())
        enc = PatchEncoder.random_orthogonal(conf["encoder"]["patch"], conf["encoder"]["dim"],
                                             conf["encoder"]["seed"])
        cb = Codebook.load(d / "codebook.bin")
        prior = CodePrior.load(d / "prior.bin")
        if args.backend == "uniform":
            backend = UniformBackend(cb.K, codebook_id=cb.id)
        else:
            backend = CountModel.load(d / "estimator.bin")
        matcher = (ExternalMatcher(shlex.split(args.matcher_cmd)) if args.matcher_cmd
                   else OracleMatcher.load(d / "matcher.bin"))
    except (FileFormatError, KeyError, json.JSONDecodeError, OSError) as exc:
        raise ConfigError(f"cannot load models from {d}: {exc}") from exc
    for name, obj in (("prior", prior), ("estimator", backend)):
        if obj.codebook_id is not None and obj.codebook_id != cb.id:
            raise ConfigError(f"{name} was built for another codebook")
        if getattr(obj, "K", getattr(obj, "vocab_size", cb.K)) != cb.K:
            raise ConfigError(f"{name} vocabulary differs from the codebook")
    ids = {"codebook": cb.id.hex(), "prior_source_count": prior.source_count,
           "backend": args.backend, "matcher": "external" if args.matcher_cmd else "oracle"}
    if args.backend == "count":
        ids["estimator"] = backend.id.hex()
    return Models(Tokenizer(enc, cb), backend, prior, matcher), ids


def leica_config(args) -> LeicaConfig:
    try:
        lam = parse_lambda(args.lam) if isinstance(args.lam, str) else args.lam
        return LeicaConfig(PerceptualConfig(lam),
                           SemanticConfig(args.tau, not args.no_global, args.phi_resize),
                           args.ablate_h, args.ablate_s, args.h_ablation)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _default_jobs() -> int:
    raw = os.environ.get("LEICA_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _mapper(jobs: int) -> Callable[[Callable, Sequence], list]:
    def run(fn, items):
        if jobs <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return run


# -- output -------------------------------------------------------------------

def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def dump_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def emit(args, text: str, started: float) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    Path(str(out) + ".log").write_text(
        f"{stamp} leica {args.command} finished in {time.time() - started:.3f}s\n"
        f"argv: {' '.join(map(shlex.quote, sys.argv))}\n", encoding="utf-8")


def base_echo(args, cfg: LeicaConfig | None = None, model_ids: dict | None = None) -> dict:
    echo = {"command": args.command, "seed": args.seed, "version": __version__}
    if cfg is not None:
        echo.update(cfg.echo())
    if model_ids is not None:
        echo["models"] = model_ids
    return echo


def _errors(errs) -> list[dict]:
    return [{"id": i, "error": e} for i, e in errs]


# -- commands -----------------------------------------------------------------

def cmd_score(args) -> int:
    t0 = time.time()
    entries = read_manifest(args.manifest)
    cfg = leica_config(args)
    models, ids = load_models(args)
    res = score_batch([e.sample() for e in entries], models, cfg, args.jobs)
    meta = {e.id: e for e in entries}
    if args.format == "csv":
        text = dump_csv(["id", "score"], [(s.id, s.leica) for s in res.scores])
    else:
        samples = []
        for s in res.scores:
            d = s.to_dict()
            d["model"] = meta[s.id].model
            d["tags"] = list(meta[s.id].tags)
            samples.append(d)
        report = {"schema_version": SCHEMA_VERSION, "config": base_echo(args, cfg, ids),
                  "manifest": str(args.manifest), "samples": samples,
                  "errors": _errors(res.errors), "summary": res.summary()}
        text = dump_json(report)
    emit(args, text, t0)
    return EXIT_OK


def _pair_scores(pos: list[Sample], neg: list[Sample], models: Models, cfg: LeicaConfig, jobs: int):
    """Score aligned positive/negative samples; drop a pair if either side fails."""
    rp = score_batch(pos, models, cfg, jobs)
    rn = score_batch(neg, models, cfg, jobs)
    sp = {s.id: s.leica for s in rp.scores}
    sn = {s.id: s.leica for s in rn.scores}
    errs = [(i, f"positive: {e}") for i, e in rp.errors] + [(i, f"negative: {e}") for i, e in rn.errors]
    keep = [s.id for s in pos if s.id in sp and s.id in sn]
    return keep, [sp[i] for i in keep], [sn[i] for i in keep], errs


def _load_ok(entries: list[ManifestEntry]):
    """Read every image up front; failures become entry-level errors."""
    ok, errs = [], []
    for e in entries:
        try:
            Caption.from_text(e.text)
            ok.append((e, read_ppm(e.image)))
        except (LeicaError, OSError, ValueError) as exc:
            errs.append((e.id, f"{type(exc).__name__}: {exc}"))
    return ok, errs


def _lexicon(args) -> list[str]:
    path = Path(args.lexicon) if args.lexicon else Path(args.models) / "lexicon.txt"
    if not path.is_file():
        raise ConfigError(f"keyword lexicon {path} not found")
    return [w for w in path.read_text(encoding="utf-8").split() if w]


def cmd_metaeval(args) -> int:
    t0 = time.time()
    modes = [m for m in (args.perturb, args.paired, args.text) if m]
    if len(modes) != 1:
        raise ConfigError("choose exactly one of --perturb, --paired, --text")
    entries = read_manifest(args.manifest)
    cfg = leica_config(args)
    models, ids = load_models(args)
    echo = base_echo(args, cfg, ids)
    mapper = _mapper(args.jobs)
    score_fn = lambda cap, img: leica_score(cap, img, models, cfg).leica  # noqa: E731
    report: dict = {"schema_version": SCHEMA_VERSION, "manifest": str(args.manifest)}

    if args.paired:
        neg_entries = {e.id: e for e in read_manifest(args.paired)}
        if set(neg_entries) != {e.id for e in entries}:
            raise DataError("paired manifests disagree on ids")
        echo["mode"] = {"paired": str(args.paired)}
        keep, pos, neg, errs = _pair_scores([e.sample() for e in entries],
                                            [neg_entries[e.id].sample() for e in entries],
                                            models, cfg, args.jobs)
        report.update(_measures(pos, neg, keep, errs))
    elif args.perturb:
        if args.perturb not in IMAGE_KINDS:
            raise ConfigError(f"--perturb must be one of {IMAGE_KINDS}")
        degrees = args.degree or list(DEFAULT_LADDERS[args.perturb])
        echo["mode"] = {"perturb": args.perturb, "degrees": degrees, "runs": args.runs,
                        "mirror_amplitude": args.mirror_amplitude}
        ok, errs = _load_ok(entries)
        if not ok:
            raise DataError("no readable entries")
        if len(degrees) == 1:
            imgs = [img for _, img in ok]
            pos = mapper(lambda i: score_fn(Caption.from_text(ok[i][0].text), imgs[i]), range(len(ok)))
            neg = mapper(lambda i: score_fn(
                Caption.from_text(ok[i][0].text),
                distort_image(imgs[i], _dspec(args, degrees[0], cell_seed(args.seed, 0, 0, i)))),
                range(len(ok)))
            report.update(_measures(pos, neg, [e.id for e, _ in ok], errs))
        else:
            clean, rungs = noise_ladder_experiment(
                [(e.text, img) for e, img in ok], args.perturb, degrees, score_fn, args.runs,
                args.seed, args.mirror_amplitude, mapper)
            report.update({"clean_mean": clean, "rungs": [r.to_dict() for r in rungs],
                           "n": len(ok), "errors": _errors(errs)})
    else:
        ok, errs = _load_ok(entries)
        if not ok:
            raise DataError("no readable entries")
        echo["mode"] = {"text": args.text, "k": args.k, "runs": args.runs}
        caps = [Caption.from_text(e.text) for e, _ in ok]
        if args.text == "mismatch":
            def neg_cap(i):
                return perturb_text(caps[i], TextPerturbSpec("mismatch", seed=cell_seed(args.seed, i)), pool=caps)
        else:
            keywords = _lexicon(args)
            vocab = keywords if not args.vocab else Path(args.vocab).read_text(encoding="utf-8").split()
            echo["mode"]["keywords"] = len(keywords)
            ks = args.k or list(K_LADDER)
            if len(ks) > 1:
                clean, rungs = word_replacement_experiment(
                    [(e.text, img) for e, img in ok], ks, score_fn, keywords, vocab, args.runs,
                    args.seed, mapper)
                report.update({"clean_mean": clean, "rungs": [r.to_dict() for r in rungs],
                               "n": len(ok), "errors": _errors(errs)})
                report["config"] = echo
                return _emit_meta(args, report, t0)

            def neg_cap(i):
                spec = TextPerturbSpec("replace_k", ks[0], tuple(vocab), cell_seed(args.seed, i))
                return perturb_text(caps[i], spec, keywords)
        keep, pos, neg = [], [], []

        def one(i):
            try:
                return score_fn(caps[i], ok[i][1]), score_fn(neg_cap(i), ok[i][1]), None
            except LeicaError as exc:
                return None, None, f"{type(exc).__name__}: {exc}"

        for i, (p, q, err) in enumerate(mapper(one, range(len(ok)))):
            if err is None:
                keep.append(ok[i][0].id)
                pos.append(p)
                neg.append(q)
            else:
                errs.append((ok[i][0].id, err))
        report.update(_measures(pos, neg, keep, errs))
    report["config"] = echo
    return _emit_meta(args, report, t0)


def _dspec(args, degree: float, seed: int) -> DistortionSpec:
    try:
        return DistortionSpec(args.perturb, degree, seed, args.mirror_amplitude)
    except InvalidSpecError as exc:
        raise ConfigError(str(exc)) from exc


def _measures(pos, neg, ids, errs) -> dict:
    if not pos:
        raise DataError("no scorable pairs")
    rep = meta_evaluate(pos, neg)
    out = rep.to_dict()
    out.pop("config")
    out["pairs"] = [{"id": i, "pos": p, "neg": q} for i, p, q in zip(ids, pos, neg)]
    out["errors"] = _errors(errs)
    return out


def _emit_meta(args, report: dict, t0: float) -> int:
    if args.format == "csv":
        if "rungs" in report:
            keys = ["degree", "score_mean", "score_std", "tau_mean", "tau_std", "accuracy_mean"]
            text = dump_csv(keys, [[r[k] for k in keys] for r in report["rungs"]])
        else:
            keys = ["accuracy", "kendall_tau", "pearson", "spearman", "n"]
            text = dump_csv(["measure", "value"], [(k, report[k]) for k in keys])
    else:
        text = dump_json(report)
    emit(args, text, t0)
    return EXIT_OK


def cmd_perturb(args) -> int:
    t0 = time.time()
    src = Path(args.inp)
    if src.suffix == ".jsonl":
        entries = read_manifest(src)
        out = Path(args.out)
        (out / "images").mkdir(parents=True, exist_ok=True)
        rows = []
        for i, e in enumerate(entries):
            img = read_ppm(e.image)
            name = f"images/{i:05d}.ppm"
            write_ppm(out / name, distort_image(img, _dspec(args, args.degree, cell_seed(args.seed, i))))
            row = {"id": e.id, "text": e.text, "image": name}
            if e.model is not None:
                row["model"] = e.model
            if e.tags:
                row["tags"] = list(e.tags)
            rows.append(row)
        write_manifest(out / "manifest.jsonl", rows)
        log.info("wrote %d images to %s in %.2fs", len(rows), out, time.time() - t0)
    else:
        try:
            img = read_ppm(src)
        except OSError as exc:
            raise DataError(f"cannot read {src}: {exc}") from exc
        write_ppm(args.out, distort_image(img, _dspec(args, args.degree, args.seed)))
    return EXIT_OK


def cmd_rank(args) -> int:
    t0 = time.time()
    cfg = leica_config(args)
    models, ids = load_models(args)
    rows = []
    for path in args.manifests:
        entries = read_manifest(path)
        res = score_batch([e.sample() for e in entries], models, cfg, args.jobs)
        names = {e.model for e in entries if e.model}
        name = names.pop() if len(names) == 1 else Path(path).parent.name or Path(path).stem
        rows.append({"model": name, "manifest": str(path), "mean": res.mean, "std": res.std,
                     "n": len(res.scores), "n_errors": len(res.errors)})
    # unscorable manifests sink to the bottom; name breaks exact ties
    rows.sort(key=lambda r: (r["mean"] is None, -(r["mean"] or 0.0), r["model"], r["manifest"]))
    for i, r in enumerate(rows, 1):
        r["rank"] = i
    if args.format == "json":
        text = dump_json({"schema_version": SCHEMA_VERSION, "config": base_echo(args, cfg, ids),
                          "ranking": rows})
    elif args.format == "csv":
        keys = ["rank", "model", "mean", "std", "n", "n_errors"]
        text = dump_csv(keys, [[r[k] for k in keys] for r in rows])
    else:
        text = _table(rows)
    emit(args, text, t0)
    return EXIT_OK


def _table(rows: list[dict]) -> str:
    head = ("rank", "model", "mean", "std", "n")
    body = [(str(r["rank"]), r["model"],
             "-" if r["mean"] is None else f"{r['mean']:.6g}",
             "-" if r["std"] is None else f"{r['std']:.4g}", str(r["n"])) for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    return "\n".join([line(head), line(["-" * w for w in widths])] + [line(b) for b in body]) + "\n"


def cmd_stability(args) -> int:
    t0 = time.time()
    entries = read_manifest(args.manifest)
    cfg = leica_config(args)
    models, ids = load_models(args)
    res = score_batch([e.sample() for e in entries], models, cfg, args.jobs)
    values = [s.leica for s in res.scores]
    if not values:
        raise DataError("no scorable samples")
    sizes = args.sizes or [min(100, len(values)), len(values)]
    try:
        rows = stability_sweep(values, lambda xs: float(np.mean(xs)), sizes, args.repeats, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    full = float(np.mean(values))
    out = [{"size": r.size, "mean": r.mean, "std": r.std, "values": list(r.values),
            "rel_diff_full": abs(r.mean - full) / abs(full) if full else None,
            "rel_std": r.std / abs(r.mean) if r.mean else None} for r in rows]
    echo = base_echo(args, cfg, ids)
    echo.update({"sizes": sizes, "repeats": args.repeats})
    if args.format == "csv":
        keys = ["size", "mean", "std", "rel_diff_full", "rel_std"]
        text = dump_csv(keys, [[r[k] for k in keys] for r in out])
    else:
        text = dump_json({"schema_version": SCHEMA_VERSION, "config": echo, "full_mean": full,
                          "n": len(values), "rows": out, "errors": _errors(res.errors)})
    emit(args, text, t0)
    return EXIT_OK


def cmd_synth(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if args.size % args.patch or args.size % 8:
        raise ConfigError("--size must be divisible by --patch and by 8")
    corpus = all_scenes(tuple(args.fit_seeds))
    world = build_oracles(corpus, size=args.size, patch=args.patch, dim=args.dim, K=args.K,
                          alpha=args.alpha, seed=args.seed)
    world.codebook.save(out / "codebook.bin")
    world.prior.save(out / "prior.bin")
    world.estimator.save(out / "estimator.bin")
    world.matcher.save(out / "matcher.bin")
    conf = {"encoder": {"patch": args.patch, "dim": args.dim, "seed": args.seed}, "size": args.size,
            "K": world.codebook.K, "alpha": args.alpha, "fit_seeds": list(args.fit_seeds),
            "codebook_id": world.codebook.id.hex(), "version": __version__}
    (out / "config.json").write_text(dump_json(conf), encoding="utf-8")
    (out / "lexicon.txt").write_text("\n".join(keyword_lexicon()) + "\n", encoding="utf-8")
    (out / "vocabulary.txt").write_text("\n".join(replacement_vocabulary()) + "\n", encoding="utf-8")
    rows = []
    for i, spec in enumerate(random_scenes(args.n, args.seed)):
        name = f"images/{i:05d}.ppm"
        write_ppm(out / name, render(spec, args.size)[0])
        rows.append({"id": f"s{i:05d}", "text": spec.caption, "image": name,
                     "tags": [spec.shape, spec.color, spec.quadrant, spec.background]})
    write_manifest(out / "manifest.jsonl", rows)
    log.info("synthetic world with %d samples written to %s in %.2fs", args.n, out, time.time() - t0)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, out_formats=("json", "csv")) -> None:
    p.add_argument("--models", required=True, help="directory written by `leica synth`")
    p.add_argument("--backend", choices=("count", "uniform"), default="count")
    p.add_argument("--matcher-cmd", default=None,
                   help="external matcher command speaking newline-delimited JSON on stdio")
    p.add_argument("--lambda", dest="lam", default=DEFAULT_LAMBDA,
                   help="log threshold (e.g. -20.72) or a probability (e.g. 1e-9)")
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--no-global", action="store_true", help="drop the exp(psi/tau) factor")
    p.add_argument("--phi-resize", choices=("2d", "1d"), default="2d")
    p.add_argument("--ablate-h", action="store_true")
    p.add_argument("--ablate-s", action="store_true")
    p.add_argument("--h-ablation", choices=H_ABLATIONS, default="shifted")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="default: $LEICA_JOBS or 1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=out_formats, default=out_formats[0])
    p.add_argument("--out", default=None, help="report path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leica", description="Score images against captions with code likelihoods and patch relevance.")
    ap.add_argument("--version", action="version", version=f"leica {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a manifest")
    p.add_argument("manifest")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("metaeval", help="accuracy / tau / pearson / spearman of a distortion protocol")
    p.add_argument("manifest", help="clean (matched) manifest")
    p.add_argument("--perturb", choices=IMAGE_KINDS, help="distort images of the clean manifest")
    p.add_argument("--degree", type=float, nargs="+",
                   help="one degree, or several for a ladder (default: the kind's standard ladder)")
    p.add_argument("--mirror-amplitude", type=float, default=DEFAULT_MIRROR_AMPLITUDE)
    p.add_argument("--paired", help="negative manifest aligned by id")
    p.add_argument("--text", choices=("mismatch", "replace"))
    p.add_argument("--k", type=int, nargs="+", help="keywords to replace; several give a ladder (default 0..4)")
    p.add_argument("--lexicon", help="keyword list (default: MODELS/lexicon.txt)")
    p.add_argument("--vocab", help="replacement words (default: the lexicon)")
    p.add_argument("--runs", type=int, default=5, help="seeds per ladder rung")
    _add_common(p)
    p.set_defaults(func=cmd_metaeval)

    p = sub.add_parser("perturb", help="distort one PPM image or every image of a manifest")
    p.add_argument("--kind", dest="perturb", choices=IMAGE_KINDS, required=True)
    p.add_argument("--degree", type=float, required=True)
    p.add_argument("--mirror-amplitude", type=float, default=DEFAULT_MIRROR_AMPLITUDE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="inp", required=True, help="PPM file or JSONL manifest")
    p.add_argument("--out", required=True, help="PPM file, or directory for a manifest")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("rank", help="rank models by mean score")
    p.add_argument("manifests", nargs="+")
    _add_common(p, ("table", "json", "csv"))
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("stability", help="subsample-size stability sweep")
    p.add_argument("manifest")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--repeats", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("synth", help="write a synthetic world: oracle models, images, manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="samples in the manifest")
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--K", type=int, default=DEFAULT_K)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--fit-seeds", type=int, nargs="+", default=list(FIT_SEEDS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="leica: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        print("leica: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, VocabularyMismatchError, InvalidSpecError) as exc:
        print(f"leica: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileFormatError) as exc:
        print(f"leica: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.debug("internal error", exc_info=True)
        print(f"leica: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
