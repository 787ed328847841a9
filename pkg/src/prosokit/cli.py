"""Pipeline orchestration CLI.

Subcommands: analyze, manipulate, events, labels, score, report, wer,
prosody-train, selftest. Sessions come from a CSV manifest; options from a
flat key=value config file plus flags. Every run writes into a directory
stamped with the config hash and seed, per-session failures are isolated
into an error log, and per-session seeds derive from the global seed so
worker parallelism cannot change outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dialog, evaluate, manipulate, prosody_model, sidecar
from .audio import read_wav, write_wav
from .evaluate import (
    ANCHOR_IN_SILENCE,
    ANCHOR_PRE_SILENCE,
    EvalReport,
    METRIC_SET_SHIFT_HOLD,
    METRIC_SET_SHIFT_MIDTURN,
    ProbabilityStream,
    ScoredEvent,
    WindowOutOfRange,
    anchor_time,
    build_report,
    report_to_csv,
    score_event,
    wer,
)
from .seeds import derive_seed
from .vocoder import VocoderConfig, analyze

DEFAULT_SNR_GRID = "-10:10:2.5"


# ---------------------------------------------------------------------------
# manifest and run configuration


@dataclass(frozen=True)
class SessionEntry:
    session_id: str
    wav_ch0_path: str
    wav_ch1_path: str
    words_path: str
    fold: int
    split: str  # train | val | test

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"{self.session_id}: bad split {self.split!r}")
        if not 0 <= self.fold <= 4:
            raise ValueError(f"{self.session_id}: fold must be in 0..4")


def read_manifest(path: str | Path) -> list[SessionEntry]:
    """Relative paths in the manifest resolve against its directory."""
    base = Path(path).parent

    def resolve(p: str) -> str:
        return p if Path(p).is_absolute() else str(base / p)

    entries = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            entries.append(SessionEntry(
                rec["session_id"], resolve(rec["wav_ch0_path"]),
                resolve(rec["wav_ch1_path"]), resolve(rec["words_path"]),
                int(rec["fold"]), rec["split"],
            ))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    ids = [e.session_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate session ids")
    return sorted(entries, key=lambda e: e.session_id)


def write_manifest(path: str | Path, entries: list[SessionEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "wav_ch0_path", "wav_ch1_path",
                         "words_path", "fold", "split"])
        for e in entries:
            writer.writerow([e.session_id, e.wav_ch0_path, e.wav_ch1_path,
                             e.words_path, e.fold, e.split])


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    conditions: tuple = ("clean",)
    snr_grid: tuple = tuple(manipulate.snr_grid())
    anchor: str = ANCHOR_PRE_SILENCE
    window_ms: float = 200.0
    min_silence_ms: float = 200.0
    context_s: float = 1.0
    margin_s: float = 2.0
    stride_s: float = 1.0
    bridge_ms: float = 100.0
    scope: str = "auto"
    frame_period_ms: float = 10.0
    fft_size: int = 512
    analysis_window_s: float = 30.0
    f0_floor_hz: float = 60.0
    f0_ceil_hz: float = 400.0
    energy_floor_db: float = -60.0

    def vocoder(self) -> VocoderConfig:
        return VocoderConfig(
            self.frame_period_ms, self.fft_size, self.analysis_window_s,
            self.f0_floor_hz, self.f0_ceil_hz, self.energy_floor_db,
        )

    def canonical(self) -> str:
        # workers is an execution detail that cannot change outputs, so it
        # stays out of the provenance record
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "workers":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parts.append(f"{f.name}={value}")
        return "\n".join(parts)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


def parse_snr_grid(text: str) -> tuple:
    lo, hi, step = (float(v) for v in text.split(":"))
    return tuple(manipulate.snr_grid(lo, hi, step))


def load_config_file(path: str | Path) -> dict:
    values: dict = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed config line {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def build_run_config(args) -> RunConfig:
    cfg = RunConfig()
    overrides: dict = {}
    if getattr(args, "config", None):
        raw = load_config_file(args.config)
        valid = {f.name: f for f in fields(RunConfig)}
        for key, value in raw.items():
            if key == "snr_grid":
                overrides[key] = parse_snr_grid(value)
            elif key == "conditions":
                overrides[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key in valid:
                current = getattr(cfg, key)
                caster = type(current)
                overrides[key] = caster(value)
            else:
                raise ValueError(f"unknown config key {key!r}")
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "conditions", None):
        overrides["conditions"] = tuple(
            v.strip() for v in args.conditions.split(",") if v.strip()
        )
    if getattr(args, "snr_grid", None):
        overrides["snr_grid"] = parse_snr_grid(args.snr_grid)
    if getattr(args, "anchor", None):
        overrides["anchor"] = args.anchor
    return replace(cfg, **overrides)


def run_dir(args, config: RunConfig) -> Path:
    out = Path(args.out) / f"run-{config.hash()}-s{config.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.canonical() + "\n")
    return out


@dataclass
class ErrorLog:
    rows: list = field(default_factory=list)

    def add(self, session_id: str, stage: str, error: Exception | str) -> None:
        self.rows.append((session_id, stage, str(error)))
        print(f"error [{stage}] {session_id}: {error}", file=sys.stderr)

    def write(self, out: Path) -> None:
        if not self.rows:
            return
        with open(out / "errors.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["session_id", "stage", "error"])
            writer.writerows(sorted(self.rows))

    @property
    def exit_code(self) -> int:
        return 1 if self.rows else 0


def _run_sessions(jobs, worker, workers: int):
    """Run session jobs serially or in a process pool; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


# ---------------------------------------------------------------------------
# analyze


def _analyze_job(job):
    entry_dict, config_canonical, out_dir = job
    entry = SessionEntry(**entry_dict)
    config = _config_from_canonical(config_canonical)
    try:
        for channel, wav_path in ((0, entry.wav_ch0_path), (1, entry.wav_ch1_path)):
            w = read_wav(wav_path)
            frames = analyze(w, config.vocoder())
            sidecar.save_frames(
                Path(out_dir) / f"{entry.session_id}.ch{channel}.pkvf", frames
            )
        return entry.session_id, None
    except Exception as exc:  # per-session isolation
        return entry.session_id, f"{type(exc).__name__}: {exc}"


def _config_from_canonical(canonical: str) -> RunConfig:
    values = {}
    for line in canonical.splitlines():
        key, _, value = line.partition("=")
        values[key] = value
    kwargs = {}
    for f in fields(RunConfig):
        raw = values.get(f.name)
        if raw is None:
            continue
        if f.name == "conditions":
            kwargs[f.name] = tuple(v for v in raw.split(",") if v)
        elif f.name == "snr_grid":
            kwargs[f.name] = tuple(float(v) for v in raw.split(",") if v)
        elif f.name in ("seed", "workers", "fft_size"):
            kwargs[f.name] = int(raw)
        elif f.name in ("anchor", "scope"):
            kwargs[f.name] = raw
        else:
            kwargs[f.name] = float(raw)
    return RunConfig(**kwargs)


def cmd_analyze(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    errors = ErrorLog()
    jobs = [(e.__dict__, config.canonical(), str(frames_dir)) for e in manifest]
    for session_id, err in _run_sessions(jobs, _analyze_job, config.workers):
        if err:
            errors.add(session_id, "analyze", err)
    errors.write(out)
    print(f"analyzed {len(manifest) - len(errors.rows)}/{len(manifest)} sessions -> {frames_dir}")
    return errors.exit_code


# ---------------------------------------------------------------------------
# manipulate


def _condition_tag(name: str, snr_db) -> str:
    return name if snr_db is None else f"{name}@{snr_db:g}dB"


def _manipulate_job(job):
    entry_dict, config_canonical, out_dir, condition_names = job
    entry = SessionEntry(**entry_dict)
    config = _config_from_canonical(config_canonical)
    vocoder_cfg = config.vocoder()
    try:
        channels = [read_wav(entry.wav_ch0_path), read_wav(entry.wav_ch1_path)]
        words = dialog.read_words(entry.words_path)
        written = []
        for name in condition_names:
            session_seed = derive_seed(config.seed, entry.session_id, name)
            needs_snr = name in ("babble", "speech-noise", "music")
            snrs = config.snr_grid if needs_snr else [None]
            for snr_db in snrs:
                spec = manipulate.condition_from_name(name, snr_db, session_seed)
                noise = None
                if needs_snr:
                    noise = manipulate.pink_noise(
                        channels[0].duration_s, seed=derive_seed(session_seed, "noise")
                    )
                outs = manipulate.apply_condition(
                    channels, words, spec, vocoder_cfg, noise=noise, scope=config.scope
                )
                for channel, waveform in enumerate(outs):
                    tag = _condition_tag(name, snr_db)
                    path = Path(out_dir) / f"{entry.session_id}.ch{channel}.{tag}.wav"
                    write_wav(path, waveform)
                    written.append(path.name)
        return entry.session_id, None, written
    except Exception as exc:
        return entry.session_id, f"{type(exc).__name__}: {exc}", []


def cmd_manipulate(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    audio_dir = out / "audio"
    audio_dir.mkdir(exist_ok=True)
    errors = ErrorLog()
    jobs = [(e.__dict__, config.canonical(), str(audio_dir), list(config.conditions))
            for e in manifest]
    n_files = 0
    for session_id, err, written in _run_sessions(jobs, _manipulate_job, config.workers):
        if err:
            errors.add(session_id, "manipulate", err)
        n_files += len(written)
    errors.write(out)
    print(f"wrote {n_files} condition WAVs -> {audio_dir}")
    return errors.exit_code


# ---------------------------------------------------------------------------
# events and labels


def cmd_events(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    errors = ErrorLog()
    event_rows, midturn_rows = [], []
    for entry in manifest:
        try:
            words = dialog.read_words(entry.words_path)
            duration = max(read_wav(entry.wav_ch0_path).duration_s,
                           read_wav(entry.wav_ch1_path).duration_s)
            vad = dialog.words_to_vad(words, config.bridge_ms, duration)
            events = dialog.extract_events(vad, config.min_silence_ms, config.context_s)
            points = dialog.sample_midturn(
                vad, events, config.margin_s, config.stride_s,
                derive_seed(config.seed, entry.session_id, "midturn"),
            )
            event_rows.extend((entry.session_id, e) for e in events)
            midturn_rows.extend((entry.session_id, p) for p in points)
        except Exception as exc:
            errors.add(entry.session_id, "events", exc)
    dialog.events_to_csv(out / "events.csv", event_rows)
    dialog.midturn_to_csv(out / "midturn.csv", midturn_rows)
    errors.write(out)
    print(f"extracted {len(event_rows)} events, {len(midturn_rows)} mid-turn points -> {out}")
    return errors.exit_code


def cmd_labels(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    labels_dir = out / "labels"
    labels_dir.mkdir(exist_ok=True)
    errors = ErrorLog()
    for entry in manifest:
        try:
            words = dialog.read_words(entry.words_path)
            duration = max(read_wav(entry.wav_ch0_path).duration_s,
                           read_wav(entry.wav_ch1_path).duration_s)
            vad = dialog.words_to_vad(words, config.bridge_ms, duration)
            labels = dialog.future_activity_labels(vad)
            sidecar.save_labels(labels_dir / f"{entry.session_id}.pklb", labels)
        except Exception as exc:
            errors.add(entry.session_id, "labels", exc)
    errors.write(out)
    print(f"wrote labels for {len(manifest) - len(errors.rows)} sessions -> {labels_dir}")
    return errors.exit_code


# ---------------------------------------------------------------------------
# scoring


def _find_stream(streams_dir: Path, session_id: str, condition: str, snr_db):
    tag = _condition_tag(condition, snr_db)
    for name in (f"{session_id}__{tag}.csv", f"{session_id}__{condition}.csv",
                 f"{session_id}.csv"):
        path = streams_dir / name
        if path.exists():
            return evaluate.read_stream_csv(path)
    for name in (f"{session_id}__{tag}.pkps", f"{session_id}.pkps"):
        path = streams_dir / name
        if path.exists():
            return sidecar.load_stream(path)
    raise FileNotFoundError(f"no probability stream for {session_id} in {streams_dir}")


def score_sessions(manifest, config: RunConfig, events_csv, midturn_csv,
                   streams_dir: Path, conditions, snr_values,
                   errors: ErrorLog) -> tuple[list[ScoredEvent], int]:
    """Score every event and mid-turn anchor against the matching stream."""
    by_session = {e.session_id: e for e in manifest}
    events = dialog.events_from_csv(events_csv)
    midturns = dialog.midturn_from_csv(midturn_csv) if Path(midturn_csv).exists() else []
    scored: list[ScoredEvent] = []
    dropped = 0
    for condition in conditions:
        for snr_db in snr_values:
            for session_id, event in events:
                entry = by_session.get(session_id)
                if entry is None or entry.split == "train":
                    continue
                try:
                    stream = _find_stream(streams_dir, session_id, condition, snr_db)
                    t = anchor_time(event.silence_start_s, config.anchor, config.window_ms)
                    score = score_event(stream, t, config.window_ms)
                except WindowOutOfRange:
                    dropped += 1
                    continue
                except Exception as exc:
                    errors.add(session_id, "score", exc)
                    continue
                label = evaluate.SHIFT_LABEL if event.kind == dialog.SHIFT else evaluate.HOLD_LABEL
                scored.append(ScoredEvent(session_id, METRIC_SET_SHIFT_HOLD, condition,
                                          snr_db, entry.fold, entry.split,
                                          event.silence_start_s, label, score))
                if event.kind == dialog.SHIFT:
                    scored.append(ScoredEvent(session_id, METRIC_SET_SHIFT_MIDTURN,
                                              condition, snr_db, entry.fold, entry.split,
                                              event.silence_start_s, label, score))
            for session_id, point in midturns:
                entry = by_session.get(session_id)
                if entry is None or entry.split == "train":
                    continue
                try:
                    stream = _find_stream(streams_dir, session_id, condition, snr_db)
                    score = score_event(stream, point.t_s, config.window_ms)
                except WindowOutOfRange:
                    dropped += 1
                    continue
                except Exception as exc:
                    errors.add(session_id, "score", exc)
                    continue
                scored.append(ScoredEvent(session_id, METRIC_SET_SHIFT_MIDTURN, condition,
                                          snr_db, entry.fold, entry.split,
                                          point.t_s, evaluate.HOLD_LABEL, score))
    return scored, dropped


def write_scores_csv(path: Path, scored: list[ScoredEvent], dropped: int,
                     config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# dropped_events={dropped}\n")
        writer = csv.writer(fh)
        writer.writerow(["session_id", "metric_set", "condition", "snr_db", "fold",
                         "split", "anchor_t", "label", "score"])
        for s in sorted(scored, key=lambda s: (s.metric_set, s.condition,
                                               _snr_sort(s.snr_db), s.fold,
                                               s.session_id, s.anchor_t_s, s.label)):
            writer.writerow([s.session_id, s.metric_set, s.condition,
                             "" if s.snr_db is None else f"{s.snr_db:g}",
                             s.fold, s.split, f"{s.anchor_t_s:.3f}", s.label,
                             f"{s.score:.10g}"])


def _snr_sort(snr_db):
    return float("inf") if snr_db is None else snr_db


def read_scores_csv(path: Path) -> tuple[list[ScoredEvent], int, str]:
    scored = []
    dropped = 0
    config_hash = ""
    with open(path, newline="") as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            if line.startswith("# config_hash="):
                config_hash = line.strip().split("=", 1)[1]
            if line.startswith("# dropped_events="):
                dropped = int(line.strip().split("=", 1)[1])
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        for rec in csv.DictReader(fh):
            scored.append(ScoredEvent(
                rec["session_id"], rec["metric_set"], rec["condition"],
                float(rec["snr_db"]) if rec["snr_db"] else None,
                int(rec["fold"]), rec["split"], float(rec["anchor_t"]),
                int(rec["label"]), float(rec["score"]),
            ))
    return scored, dropped, config_hash


def cmd_score(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    errors = ErrorLog()
    snr_values = list(config.snr_grid) if args.sweep else [None]
    scored, dropped = score_sessions(
        manifest, config, args.events, args.midturn or (Path(args.events).parent / "midturn.csv"),
        Path(args.streams), list(config.conditions), snr_values, errors,
    )
    write_scores_csv(out / "scores.csv", scored, dropped, config.hash())
    errors.write(out)
    print(f"scored {len(scored)} anchors ({dropped} dropped) -> {out / 'scores.csv'}")
    return errors.exit_code


# ---------------------------------------------------------------------------
# reports and figure data


def emit_figure_data(report_or_rows, path: Path, metric: str,
                     config_hash: str = "") -> None:
    """Long-format figure CSV: series=condition, x=snr_db, y=metric value,
    with CI bounds. WER values are clamped to 1.0; the raw value rides in an
    auxiliary column."""
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        if isinstance(report_or_rows, EvalReport):
            if not report_or_rows.aggregates:
                raise ValueError("empty report")
            writer.writerow(["series", "snr_db", "metric", "value", "ci_low", "ci_high"])
            for a in report_or_rows.aggregates:
                writer.writerow([a.condition,
                                 "" if a.snr_db is None else f"{a.snr_db:g}",
                                 metric, f"{a.bal_acc_mean:.6f}",
                                 f"{a.bal_acc_ci_low:.6f}", f"{a.bal_acc_ci_high:.6f}"])
        else:
            rows = list(report_or_rows)
            if not rows:
                raise ValueError("empty report")
            writer.writerow(["series", "snr_db", "metric", "value", "raw_value"])
            for condition, snr_db, value in rows:
                writer.writerow([condition,
                                 "" if snr_db is None else f"{snr_db:g}",
                                 metric, f"{min(value, 1.0):.6f}", f"{value:.6f}"])


def cmd_report(args) -> int:
    config = build_run_config(args)
    out = run_dir(args, config)
    all_scored: list[ScoredEvent] = []
    total_dropped = 0
    hashes = set()
    for scores_path in args.scores:
        scored, dropped, config_hash = read_scores_csv(Path(scores_path))
        all_scored.extend(scored)
        total_dropped += dropped
        hashes.add(config_hash)
    if len(hashes) > 1:
        print(f"refusing to merge score files with mismatched config hashes: {sorted(hashes)}",
              file=sys.stderr)
        return 2
    config_hash = hashes.pop() if hashes else config.hash()
    for metric_set in (METRIC_SET_SHIFT_HOLD, METRIC_SET_SHIFT_MIDTURN):
        if not any(s.metric_set == metric_set for s in all_scored):
            continue
        report = build_report(metric_set, all_scored, total_dropped)
        report_to_csv(report, out / f"report-{metric_set}.csv", config_hash)
        emit_figure_data(report, out / f"figure-balacc-{metric_set}.csv",
                         "bal_acc", config_hash)
        print(f"{metric_set}: {len(report.rows)} rows, {len(report.aggregates)} aggregates")
    return 0


# ---------------------------------------------------------------------------
# WER


def cmd_wer(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    errors = ErrorLog()
    hyp_dir = Path(args.hyp_dir)
    rows = []
    for entry in manifest:
        try:
            words = dialog.read_words(entry.words_path)
            ref = [w.text for w in sorted(words, key=lambda w: (w.start_s, w.channel))]
            for hyp_path in sorted(hyp_dir.glob(f"{entry.session_id}*.txt")):
                hyp = hyp_path.read_text().split()
                raw = wer(ref, hyp)
                condition, snr_db = _parse_hyp_name(hyp_path.stem, entry.session_id)
                rows.append((entry.session_id, condition, snr_db, raw))
        except Exception as exc:
            errors.add(entry.session_id, "wer", exc)
    with open(out / "wer.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={config.hash()}\n")
        writer = csv.writer(fh)
        writer.writerow(["session_id", "condition", "snr_db", "wer", "wer_raw"])
        for session_id, condition, snr_db, raw in sorted(
                rows, key=lambda r: (r[0], r[1], _snr_sort(r[2]))):
            writer.writerow([session_id, condition,
                             "" if snr_db is None else f"{snr_db:g}",
                             f"{min(raw, 1.0):.6f}", f"{raw:.6f}"])
    by_key: dict[tuple, list[float]] = {}
    for _, condition, snr_db, raw in rows:
        by_key.setdefault((condition, snr_db), []).append(raw)
    figure_rows = [(condition, snr_db, float(np.mean(values)))
                   for (condition, snr_db), values in sorted(
                       by_key.items(), key=lambda kv: (kv[0][0], _snr_sort(kv[0][1])))]
    if figure_rows:
        emit_figure_data(figure_rows, out / "figure-wer.csv", "wer", config.hash())
    errors.write(out)
    print(f"computed {len(rows)} WER rows -> {out / 'wer.csv'}")
    return errors.exit_code


def _parse_hyp_name(stem: str, session_id: str):
    rest = stem[len(session_id):].lstrip("_")
    if not rest:
        return "clean", None
    if "@" in rest:
        condition, snr_text = rest.split("@", 1)
        return condition, float(snr_text.replace("dB", ""))
    return rest, None


# ---------------------------------------------------------------------------
# prosody model training


def cmd_prosody_train(args) -> int:
    config = build_run_config(args)
    manifest = read_manifest(args.manifest)
    out = run_dir(args, config)
    errors = ErrorLog()
    events = dialog.events_from_csv(args.events)
    by_session: dict[str, list] = {}
    for session_id, event in events:
        by_session.setdefault(session_id, []).append(event)

    features: dict[str, list] = {"trainval": [], "test": []}
    labels: dict[str, list] = {"trainval": [], "test": []}
    for entry in manifest:
        if entry.session_id not in by_session:
            continue
        bucket = "test" if entry.split == "test" else "trainval"
        try:
            words = dialog.read_words(entry.words_path)
            channels = [read_wav(entry.wav_ch0_path), read_wav(entry.wav_ch1_path)]
            duration = max(ch.duration_s for ch in channels)
            vad = dialog.words_to_vad(words, config.bridge_ms, duration)
            frames = [analyze(ch, config.vocoder()) for ch in channels]
            for event in by_session[entry.session_id]:
                f = prosody_model.extract_features(
                    frames[event.prev_speaker], vad, event.prev_speaker,
                    event.silence_start_s,
                )
                features[bucket].append(f.values)
                labels[bucket].append(1 if event.kind == dialog.SHIFT else 0)
        except Exception as exc:
            errors.add(entry.session_id, "prosody-train", exc)

    if not features["trainval"]:
        print("no training events", file=sys.stderr)
        errors.write(out)
        return 1
    model = prosody_model.train_logistic(
        np.asarray(features["trainval"]), np.asarray(labels["trainval"]),
        prosody_model.TrainConfig(seed=config.seed),
    )
    model.save(out / "prosody-model.txt")

    with open(out / "prosody-metrics.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={config.hash()}\n")
        writer = csv.writer(fh)
        writer.writerow(["split", "n", "f1_weighted", "f1_hold", "f1_shift", "bal_acc"])
        for bucket in ("trainval", "test"):
            if not features[bucket]:
                continue
            probs = np.array([prosody_model.predict(model, v) for v in features[bucket]])
            preds = (probs >= 0.5).astype(int)
            f1w, f1h, f1s, bal = evaluate.classification_metrics(
                preds, np.asarray(labels[bucket])
            )
            writer.writerow([bucket, len(preds), f"{f1w:.6f}", f"{f1h:.6f}",
                             f"{f1s:.6f}", f"{bal:.6f}"])
            print(f"prosody model {bucket}: n={len(preds)} bal_acc={bal:.3f}")
    errors.write(out)
    return errors.exit_code


# ---------------------------------------------------------------------------
# selftest


def _write_stub_streams(streams_dir: Path, manifest, events, kind: str,
                        duration_by_session: dict[str, float],
                        window_s: float) -> None:
    rate = 20.0
    for entry in manifest:
        n = int(np.ceil(duration_by_session[entry.session_id] * rate))
        p = np.full(n, 0.5) if kind == "constant" else np.zeros(n)
        if kind == "separable":
            for session_id, event in events:
                if session_id != entry.session_id or event.kind != dialog.SHIFT:
                    continue
                hi = int(np.ceil(event.silence_start_s * rate - 1e-9))
                lo = max(0, int(np.ceil((event.silence_start_s - window_s) * rate - 1e-9)))
                p[lo:hi] = 1.0
        evaluate.write_stream_csv(streams_dir / f"{entry.session_id}.csv",
                                  ProbabilityStream(p, rate))


def cmd_selftest(args) -> int:
    config = build_run_config(args)
    out = run_dir(args, config)
    corpus_dir = out / "corpus"
    corpus_dir.mkdir(exist_ok=True)

    # turns long enough that every one yields a mid-turn grid point under the
    # default 2 s margin / 1 s stride
    corpus_cfg = prosody_model.CueCorpusConfig(events_per_session=5,
                                               turn_s=(5.1, 6.0))
    sessions = prosody_model.synth_cue_corpus(7, config.seed, corpus_cfg)
    entries = []
    for i, session in enumerate(sessions):
        wav0 = corpus_dir / f"{session.session_id}.ch0.wav"
        wav1 = corpus_dir / f"{session.session_id}.ch1.wav"
        words = corpus_dir / f"{session.session_id}.words.jsonl"
        write_wav(wav0, session.channels[0])
        write_wav(wav1, session.channels[1])
        dialog.write_words_jsonl(words, session.words)
        split = "val" if i < 5 else "test"
        entries.append(SessionEntry(session.session_id, str(wav0), str(wav1),
                                    str(words), i % 5, split))
    # store paths relative to the run dir so identical runs compare equal
    write_manifest(out / "manifest.csv", [
        replace(e, wav_ch0_path=str(Path(e.wav_ch0_path).relative_to(out)),
                wav_ch1_path=str(Path(e.wav_ch1_path).relative_to(out)),
                words_path=str(Path(e.words_path).relative_to(out)))
        for e in entries
    ])
    print(f"selftest corpus: {len(entries)} sessions -> {corpus_dir}")

    summary = []
    errors = ErrorLog()

    # manipulation pass over the test sessions
    audio_dir = out / "audio"
    audio_dir.mkdir(exist_ok=True)
    test_entries = [e for e in entries if e.split == "test"]
    jobs = [(e.__dict__, config.canonical(), str(audio_dir), ["clean", "noise-pi"])
            for e in test_entries]
    for session_id, err, written in _run_sessions(jobs, _manipulate_job, config.workers):
        if err:
            errors.add(session_id, "manipulate", err)
    summary.append(f"manipulate: {2 * 2 * len(test_entries)} WAVs for {len(test_entries)} test sessions")

    # events, mid-turn points, labels
    event_rows, midturn_rows = [], []
    durations = {}
    labels_dir = out / "labels"
    labels_dir.mkdir(exist_ok=True)
    for entry in entries:
        words = dialog.read_words(entry.words_path)
        duration = read_wav(entry.wav_ch0_path).duration_s
        durations[entry.session_id] = duration
        vad = dialog.words_to_vad(words, config.bridge_ms, duration)
        events = dialog.extract_events(vad, config.min_silence_ms, config.context_s)
        points = dialog.sample_midturn(vad, events, config.margin_s, config.stride_s,
                                       derive_seed(config.seed, entry.session_id, "midturn"))
        event_rows.extend((entry.session_id, e) for e in events)
        midturn_rows.extend((entry.session_id, p) for p in points)
        sidecar.save_labels(labels_dir / f"{entry.session_id}.pklb",
                            dialog.future_activity_labels(vad))
    dialog.events_to_csv(out / "events.csv", event_rows)
    dialog.midturn_to_csv(out / "midturn.csv", midturn_rows)
    n_shift = sum(1 for _, e in event_rows if e.kind == dialog.SHIFT)
    summary.append(f"events: {len(event_rows)} ({n_shift} shifts), midturn: {len(midturn_rows)}")

    # stub streams -> scores -> reports
    ok = True
    for kind in ("separable", "constant"):
        streams_dir = out / f"streams-{kind}"
        streams_dir.mkdir(exist_ok=True)
        _write_stub_streams(streams_dir, entries, event_rows, kind, durations,
                            config.window_ms / 1000.0)
        scored, dropped = score_sessions(
            entries, config, out / "events.csv", out / "midturn.csv",
            streams_dir, ["clean"], list(config.snr_grid), errors,
        )
        write_scores_csv(out / f"scores-{kind}.csv", scored, dropped, config.hash())
        for metric_set in (METRIC_SET_SHIFT_HOLD, METRIC_SET_SHIFT_MIDTURN):
            report = build_report(metric_set, scored, dropped)
            report_to_csv(report, out / f"report-{kind}-{metric_set}.csv", config.hash())
            emit_figure_data(report, out / f"figure-{kind}-{metric_set}.csv",
                             "bal_acc", config.hash())
            accs = [r.bal_acc for r in report.rows]
            if kind == "separable":
                good = all(abs(a - 1.0) < 1e-12 for a in accs)
                summary.append(f"{kind}/{metric_set}: all bal_acc == 1.0: {good}")
            else:
                good = all(abs(a - 0.5) <= 0.01 for a in accs)
                summary.append(f"{kind}/{metric_set}: bal_acc == 0.50 +- 0.01: {good}")
            expected_rows = len(config.snr_grid) * 5
            shape_ok = len(report.rows) == expected_rows and len(report.aggregates) == len(config.snr_grid)
            summary.append(f"{kind}/{metric_set}: report shape {len(report.rows)} rows "
                           f"x {len(report.aggregates)} aggregates ok: {shape_ok}")
            ok = ok and good and shape_ok

    # prosody model on the corpus
    features = {"trainval": [], "test": []}
    labels = {"trainval": [], "test": []}
    for entry in entries:
        bucket = "test" if entry.split == "test" else "trainval"
        words = dialog.read_words(entry.words_path)
        channels = [read_wav(entry.wav_ch0_path), read_wav(entry.wav_ch1_path)]
        vad = dialog.words_to_vad(words, config.bridge_ms, durations[entry.session_id])
        frames = [analyze(ch, config.vocoder()) for ch in channels]
        for session_id, event in event_rows:
            if session_id != entry.session_id:
                continue
            f = prosody_model.extract_features(frames[event.prev_speaker], vad,
                                               event.prev_speaker, event.silence_start_s)
            features[bucket].append(f.values)
            labels[bucket].append(1 if event.kind == dialog.SHIFT else 0)
    model = prosody_model.train_logistic(np.asarray(features["trainval"]),
                                         np.asarray(labels["trainval"]),
                                         prosody_model.TrainConfig(seed=config.seed))
    model.save(out / "prosody-model.txt")
    probs = np.array([prosody_model.predict(model, v) for v in features["test"]])
    _, _, _, bal = evaluate.classification_metrics((probs >= 0.5).astype(int),
                                                   np.asarray(labels["test"]))
    summary.append(f"prosody model test bal_acc: {bal:.3f} (>= 0.90: {bal >= 0.90})")
    ok = ok and bal >= 0.90

    errors.write(out)
    ok = ok and not errors.rows
    summary.append(f"selftest: {'PASS' if ok else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser, manifest=True):
    if manifest:
        parser.add_argument("--manifest", required=True, help="session manifest CSV")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--workers", type=int, help="parallel session workers")
    parser.add_argument("--out", default="out", help="output root directory")
    parser.add_argument("--conditions", help="comma-separated condition names")
    parser.add_argument("--snr-grid", dest="snr_grid",
                        help=f"lo:hi:step in dB (default {DEFAULT_SNR_GRID})")
    parser.add_argument("--anchor", choices=[ANCHOR_PRE_SILENCE, ANCHOR_IN_SILENCE],
                        help="scoring window anchoring")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prosokit",
        description="Prosody/lexical cue isolation and turn-taking evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="decompose session audio into vocoder frames")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("manipulate", help="render condition WAVs")
    _add_common(p)
    p.set_defaults(func=cmd_manipulate)

    p = sub.add_parser("events", help="extract shift/hold events and mid-turn points")
    _add_common(p)
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("labels", help="build future-activity label sidecars")
    _add_common(p)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("score", help="score probability streams at event anchors")
    _add_common(p)
    p.add_argument("--events", required=True, help="events CSV from the events step")
    p.add_argument("--midturn", help="mid-turn CSV (defaults next to events)")
    p.add_argument("--streams", required=True, help="directory of probability streams")
    p.add_argument("--sweep", action="store_true",
                   help="replicate scoring across the SNR grid")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="build metric reports from score files")
    _add_common(p, manifest=False)
    p.add_argument("--scores", nargs="+", required=True, help="scores CSV files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("wer", help="word error rates of transcripts vs reference words")
    _add_common(p)
    p.add_argument("--hyp-dir", required=True,
                   help="directory of <session>[__condition[@snr]].txt transcripts")
    p.set_defaults(func=cmd_wer)

    p = sub.add_parser("prosody-train", help="train the prosody-only predictor")
    _add_common(p)
    p.add_argument("--events", required=True, help="events CSV from the events step")
    p.set_defaults(func=cmd_prosody_train)

    p = sub.add_parser("selftest", help="end-to-end pipeline check on synthetic dyads")
    _add_common(p, manifest=False)
    p.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
