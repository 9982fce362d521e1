"""Command implementations behind ``main.py``; one ``cmd_*`` per subcommand.

Each command takes the parsed argparse namespace and returns an exit code.
Toolkit errors that abort a whole command propagate to ``main``; batch
commands collect per-file failures, keep going and return a nonzero code.
"""

import argparse
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from tqdm import tqdm

from core.augment import NoiseCorpus, augment_online, build_offline_manifest, load_rirs, render_record
from core.config import ExperimentConfig
from core.dsp import SAMPLE_RATE, FeatureMatrix, crop_or_wrap, extract_fbank, frame_count, instance_normalize, segment_offsets
from core.errors import InputError, ToolkitError
from core.fusion import PUBLISHED_WEIGHTS, FusionWeights, equal_weights, fuse, search_weights
from core.metrics import evaluate, roc_sweep
from core.nnet import build_network, embed, load_weights, save_weights
from core.scoring import ScoreSet, apply_asnorm, grid_search_norm, sample_eval_segments, trial_labels, trial_score
from core.storage import (
    EmbeddingStore,
    read_augment_manifest,
    read_feature_matrix,
    read_id_list,
    read_manifest,
    read_scores,
    read_trials,
    write_augment_manifest,
    write_feature_matrix,
    write_id_list,
    write_manifest,
    write_scores,
    write_trials,
)
from core.synth import SyntheticSpec, generate
from ui.report import format_failures, format_grid, format_metrics, format_weights
from utils.audio_io import read_wav, write_wav
from utils.export import ReportExporter
from utils.seeding import derive_rng, hash64

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = ".fbank"
STORE_NAME = "embeddings.store"
TRIALS_NAME = "trials.txt"
COHORT_NAME = "cohort.lst"
OUTPUT_PATHS = ("out",)

T = TypeVar("T")
Failure = Tuple[str, ToolkitError]


def load_config(args: argparse.Namespace, required: Sequence[str] = (), optional: Sequence[str] = ()) -> ExperimentConfig:
    """Config file (or defaults) with ``--seed`` applied on top.

    Path arguments named in ``required`` or ``optional`` fall back to the
    config's ``io`` section when the flag is absent. Required ones must end up
    set; every input path that is set must exist.
    """
    path = getattr(args, "config", None)
    cfg = ExperimentConfig.from_file(path) if path else ExperimentConfig()
    cfg = cfg.with_seed(getattr(args, "seed", None))
    names = tuple(required) + tuple(optional)
    for name in names:
        if not getattr(args, name, None) and getattr(cfg.io, name):
            setattr(args, name, getattr(cfg.io, name))
    missing = [name for name in required if not getattr(args, name, None)]
    if missing:
        raise InputError(f"missing --{missing[0]} (pass the flag or set io.{missing[0]} in the config)")
    for name in names:
        value = getattr(args, name, None)
        if value and name not in OUTPUT_PATHS and not Path(value).exists():
            raise InputError(f"--{name} path does not exist: {value}")
    return cfg


def parse_grid(text: str) -> Tuple[List[int], List[int]]:
    """``"200,300/20,40"`` -> ([200, 300], [20, 40])."""
    try:
        ns_text, xs_text = text.split("/")
        ns = [int(v) for v in ns_text.split(",") if v.strip()]
        xs = [int(v) for v in xs_text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--grid must look like N1,N2/X1,X2, got {text!r}") from None
    if not ns or not xs or min(ns) <= 0 or min(xs) <= 0:
        raise InputError(f"--grid needs positive N and X values, got {text!r}")
    return ns, xs


def parse_floats(text: str, what: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{what} must be comma-separated numbers, got {text!r}") from None


def run_batch(
    items: Sequence[Tuple[str, Any]],
    worker: Callable[[Any], T],
    jobs: int = 1,
    desc: str = "",
) -> Tuple[Dict[str, T], List[Failure]]:
    """Apply ``worker`` to every payload, collecting results and failures in input order."""

    def attempt(item):
        key, payload = item
        try:
            return key, worker(payload), None
        except ToolkitError as exc:
            return key, None, exc

    results: Dict[str, T] = {}
    failures: List[Failure] = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        outcomes = executor.map(attempt, items)
        for key, value, error in tqdm(outcomes, total=len(items), desc=desc, unit="arq", disable=None):
            if error is None:
                results[key] = value
            else:
                logger.error("%s: %s", key, error)
                failures.append((key, error))
    return results, failures


def _batch_exit_code(failures: Sequence[Failure]) -> int:
    return max((error.exit_code for _, error in failures), default=0)


def _read_padded_wav(path: str, min_samples: int):
    wave = read_wav(path)
    return crop_or_wrap(wave, min_samples) if len(wave) < min_samples else wave


def cmd_features(args: argparse.Namespace) -> int:
    """Extract one feature matrix file per manifest entry."""
    cfg = load_config(args, required=("out",))
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out)
    win = cfg.feature.win_samples(SAMPLE_RATE)

    def work(entry):
        utt, path = entry
        feat = extract_fbank(_read_padded_wav(path, win), cfg.feature)
        write_feature_matrix(feat, out_dir / f"{utt}{FEATURE_SUFFIX}")
        return feat.n_frames

    _, failures = run_batch([(utt, (utt, path)) for utt, path in entries], work, args.jobs, "features")
    print(format_failures(failures, len(entries)))
    return _batch_exit_code(failures)


def cmd_augment(args: argparse.Namespace) -> int:
    """Write the offline augmentation manifest, or render online augmentations."""
    cfg = load_config(args, required=("out",), optional=("corpus", "rirs"))
    entries = read_manifest(args.manifest)
    if not args.online:
        records = build_offline_manifest(entries, cfg.master_seed)
        write_augment_manifest(records, args.out)
        print(f"{len(records)} registros de aumento gravados em {args.out}")
        return 0

    if not args.corpus or not args.rirs:
        raise InputError("--online needs --corpus and --rirs")
    corpus = NoiseCorpus.from_directory(Path(args.corpus), read_wav)
    rirs = [w for room in load_rirs(Path(args.rirs), read_wav).values() for w in room]
    audio_dir = Path(args.out).parent / f"{Path(args.out).stem}_wav"

    def work(entry):
        utt, path = entry
        rng = derive_rng(cfg.master_seed, "online", utt)
        target = audio_dir / f"{utt}.wav"
        write_wav(augment_online(read_wav(path), corpus, rirs, rng), target)
        return str(target.resolve())

    results, failures = run_batch([(utt, (utt, path)) for utt, path in entries], work, args.jobs, "augment")
    write_manifest([(utt, results[utt]) for utt, _ in entries if utt in results], args.out)
    print(format_failures(failures, len(entries)))
    return _batch_exit_code(failures)


def cmd_render(args: argparse.Namespace) -> int:
    """Materialize augmentation manifest records as feature matrices."""
    cfg = load_config(args, required=("out",), optional=("corpus", "rirs"))
    records = read_augment_manifest(args.manifest)
    needs_corpus = any(r.transform in ("music", "noise", "speech") for r in records)
    needs_rirs = any(r.transform.startswith("rir_") for r in records)
    if needs_corpus and not args.corpus:
        raise InputError("manifest has additive-noise records; pass --corpus")
    if needs_rirs and not args.rirs:
        raise InputError("manifest has reverberation records; pass --rirs")
    corpus = NoiseCorpus.from_directory(Path(args.corpus), read_wav) if needs_corpus else None
    rirs = load_rirs(Path(args.rirs), read_wav) if needs_rirs else None
    out_dir = Path(args.out)
    win = cfg.feature.win_samples(SAMPLE_RATE)

    def work(record):
        feat = render_record(record, _read_padded_wav(record.source_path, win), corpus, rirs, cfg.feature)
        write_feature_matrix(feat, out_dir / f"{record.record_id}{FEATURE_SUFFIX}")
        return feat.n_frames

    _, failures = run_batch([(r.record_id, r) for r in records], work, args.jobs, "render")
    print(format_failures(failures, len(records)))
    return _batch_exit_code(failures)


def _segment_rows(feat: FeatureMatrix, n_frames: int, count: int) -> List[FeatureMatrix]:
    """Frame-domain counterpart of ``sample_eval_segments`` for stored features."""
    if feat.n_frames < n_frames:
        feat = feat.with_values(np.take(feat.values, np.arange(n_frames) % feat.n_frames, axis=0))
    return [
        feat.with_values(feat.values[start:start + n_frames])
        for start in segment_offsets(feat.n_frames, n_frames, count)
    ]


def evaluation_features(path: str, cfg: ExperimentConfig) -> np.ndarray:
    """Instance-normalized features of every evaluation segment, shape (n, L, D)."""
    seg = cfg.segment
    if path.endswith(FEATURE_SUFFIX):
        feat = read_feature_matrix(path)
        if feat.n_mels != cfg.feature.n_mels:
            raise InputError(f"{path}: {feat.n_mels} mel bins, config expects {cfg.feature.n_mels}")
        seg_samples = int(round(seg.seg_len_s * SAMPLE_RATE))
        n_frames = frame_count(seg_samples, cfg.feature.win_samples(SAMPLE_RATE), feat.hop_samples)
        segments = _segment_rows(feat, n_frames, seg.n_segments)
    else:
        wave = read_wav(path)
        segments = [extract_fbank(w, cfg.feature) for w in sample_eval_segments(wave, seg.n_segments, seg.seg_len_s)]
    return np.stack([instance_normalize(s).values for s in segments])


def cmd_embed(args: argparse.Namespace) -> int:
    """Embed every manifest entry (WAV or feature file) into an embedding store."""
    cfg = load_config(args, required=("out",), optional=("weights",))
    if args.weights:
        net = load_weights(args.weights)
        if net.cfg.feat_dim != cfg.feature.n_mels:
            raise InputError(f"weights expect {net.cfg.feat_dim} mel bins, config has {cfg.feature.n_mels}")
    else:
        net = build_network(cfg.network, hash64(cfg.master_seed, "network"))
    if args.save_weights:
        save_weights(net, args.save_weights)
        logger.info("network weights written to %s", args.save_weights)

    entries = read_manifest(args.manifest)
    results, failures = run_batch(
        [(utt, path) for utt, path in entries],
        lambda path: embed(net, evaluation_features(path, cfg)),
        args.jobs,
        "embed",
    )
    store = EmbeddingStore(net.cfg.embed_dim)
    for utt, _ in entries:
        if utt in results:
            store.add_utterance(utt, results[utt])
    store.save(args.out)
    print(format_failures(failures, len(entries)))
    return _batch_exit_code(failures)


def cmd_score(args: argparse.Namespace) -> int:
    """Score a trial list with the segment-by-segment cosine protocol."""
    load_config(args, required=("trials", "store", "out"))
    trials = read_trials(args.trials)
    store = EmbeddingStore.load(args.store)
    cache: Dict[str, np.ndarray] = {}

    def segments(utt: str) -> np.ndarray:
        if utt not in cache:
            cache[utt] = store.segments(utt)
        return cache[utt]

    scores = ScoreSet.from_trials(
        Path(args.out).stem,
        trials,
        (trial_score(segments(t.enroll_id), segments(t.test_id)) for t in trials),
    )
    write_scores(scores, args.out)
    print(f"{len(scores)} tentativas pontuadas em {args.out}")
    return 0


def cmd_norm(args: argparse.Namespace) -> int:
    """Grid-search the AS-norm cohort, then normalize with the selected cell."""
    cfg = load_config(args, required=("trials", "store", "pool", "out"))
    trials = read_trials(args.trials)
    scores = read_scores(args.scores)
    store = EmbeddingStore.load(args.store)
    pool_ids = read_id_list(args.pool)
    pool = np.stack([store[i] for i in pool_ids])
    vectors = store.utterance_vectors()
    ns, xs = parse_grid(args.grid) if args.grid else (list(cfg.norm.grid_ns), list(cfg.norm.grid_xs))
    repeats = args.repeats or cfg.norm.repeats

    result = grid_search_norm(
        scores, trials, vectors, pool, ns, xs,
        repeats=repeats, seed=cfg.master_seed, dcf=cfg.dcf, jobs=args.jobs,
    )
    out = Path(args.out)
    grid_path = Path(args.grid_out) if args.grid_out else out.with_suffix(".grid.csv")
    ReportExporter(str(Path.cwd())).export_grid_to_csv(result.rows, str(grid_path))
    print(format_grid(result.rows, result.selected, result.notes))

    normalized, flagged = apply_asnorm(scores, trials, vectors, pool, result.selected_cohort)
    write_scores(normalized, out)
    if flagged.size:
        print(f"{flagged.size} tentativa(s) sem dispersão na coorte mantiveram o escore bruto")
    return 0


def _resolve_weights(args: argparse.Namespace, cfg: ExperimentConfig, system_ids: List[str]) -> Optional[FusionWeights]:
    if args.weights:
        return FusionWeights.from_sequence(system_ids, parse_floats(args.weights, "--weights"))
    if args.preset:
        if args.preset not in PUBLISHED_WEIGHTS:
            raise InputError(f"unknown preset {args.preset!r}; known: {', '.join(sorted(PUBLISHED_WEIGHTS))}")
        return FusionWeights(dict(PUBLISHED_WEIGHTS[args.preset]))
    if cfg.fusion.weights:
        return FusionWeights.from_sequence(system_ids, cfg.fusion.weights)
    return None


def cmd_fuse(args: argparse.Namespace) -> int:
    """Fuse score files with fixed, preset, searched or equal weights."""
    cfg = load_config(args, required=("out",), optional=("trials",))
    paths = list(args.scores) or list(cfg.fusion.systems)
    if not paths:
        raise InputError("fuse needs at least one score file")
    score_sets = [read_scores(p) for p in paths]
    system_ids = [s.system_id for s in score_sets]
    if len(set(system_ids)) != len(system_ids):
        raise InputError(f"score files must have distinct names, got {system_ids}")

    weights = _resolve_weights(args, cfg, system_ids)
    out = Path(args.out)
    if weights is None and args.trials:
        trials = read_trials(args.trials)
        labels_by_key = dict(zip((t.key for t in trials), trial_labels(trials)))
        missing = [k for k in score_sets[0].keys if k not in labels_by_key]
        if missing or len(labels_by_key) != len(score_sets[0].keys):
            raise InputError(f"trial list does not match the scored trials of {system_ids[0]}")
        labels = np.array([labels_by_key[k] for k in score_sets[0].keys])
        result = search_weights(
            score_sets, labels,
            granularity=args.granularity or cfg.fusion.granularity,
            objective=args.objective or cfg.fusion.objective,
            coarse_step=cfg.fusion.coarse_step,
            dcf=cfg.dcf,
        )
        trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
        ReportExporter(str(Path.cwd())).export_trace_to_csv(result, str(trace_path))
        weights = result.weights
        print(f"Busca: EER={result.eer:.4f}% minDCF={result.dcf:.4f} ({len(result.trace)} avaliações)")
    elif weights is None:
        weights = equal_weights(system_ids)

    fused = fuse(score_sets, weights, system_id=out.stem)
    write_scores(fused, out)
    print(format_weights(weights))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """EER and minDCF of one score file against a labeled trial list."""
    cfg = load_config(args, required=("trials",))
    scores = read_scores(args.scores)
    trials = read_trials(args.trials)
    labels = trial_labels(trials)
    aligned = scores.aligned([t.key for t in trials])
    report = evaluate(aligned, labels, cfg.dcf)
    print(format_metrics(report, scores.system_id))
    exporter = ReportExporter(str(Path.cwd()))
    if args.out:
        exporter.export_metrics_to_json(report, args.out, extra={"system_id": scores.system_id})
    if args.det:
        exporter.export_det_to_csv(roc_sweep(aligned, labels), args.det)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    """Write a synthetic store, labeled trial list and cohort pool list."""
    spec = SyntheticSpec(
        n_speakers=args.speakers,
        utterances_per_speaker=args.utterances,
        dim=args.dim,
        within_speaker_spread=args.within,
        between_speaker_spread=args.between,
        seed=args.seed if args.seed is not None else 0,
        n_cohort=args.cohort,
    )
    data = generate(spec)
    out_dir = Path(args.out)
    data.store.save(out_dir / STORE_NAME)
    write_trials(data.trials, out_dir / TRIALS_NAME)
    write_id_list(data.cohort_ids, out_dir / COHORT_NAME)
    print(f"{len(data.store)} vetores, {len(data.trials)} tentativas e {len(data.cohort_ids)} vetores de coorte em {out_dir}")
    return 0
