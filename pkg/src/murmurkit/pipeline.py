"""End-to-end configuration and the per-recording feature chain.

read -> resample -> clip outliers -> band-pass -> segment -> CWT (real part,
scales x time) -> resize + normalize. The configuration is an INI file; see
``data/default.ini`` for the shipped preset.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .audio_io import AudioSignal, read_wav, resample
from .dataset import SmoteParams
from .errors import ConfigError
from .funnelcnn import ModelConfig
from .preprocess import (
    BandpassParams,
    OutlierParams,
    SegmentPlan,
    butterworth_bandpass,
    remove_outliers,
    segment,
)
from .scalogram import MorletParams, ScaleGrid, cwt, default_hop, to_model_input
from .trainer import TrainConfig

MODEL_PRESETS = {
    "funnel-64": {},
}


@dataclass(frozen=True)
class ScalogramSettings:
    n_cycles: float = 6.0
    n_scales: int = 64
    fmin_hz: float = 20.0
    fmax_hz: float = 500.0
    columns: int = 256

    def grid(self) -> ScaleGrid:
        return ScaleGrid.log_spaced(self.fmin_hz, self.fmax_hz, self.n_scales)


@dataclass(frozen=True)
class PipelineConfig:
    target_hz: int = 2000
    outliers: OutlierParams = field(default_factory=OutlierParams)
    bandpass: BandpassParams = field(default_factory=BandpassParams)
    segment: SegmentPlan = field(default_factory=SegmentPlan)
    scalogram: ScalogramSettings = field(default_factory=ScalogramSettings)
    input_shape: tuple = (64, 64)
    model_preset: str = "funnel-64"
    train: TrainConfig = field(default_factory=TrainConfig)
    smote: SmoteParams = field(default_factory=SmoteParams)
    k: int = 10
    cv_seed: int = 0
    calibration_samples: int = 100
    bench_runs: int = 50

    def __post_init__(self):
        if self.target_hz <= 0:
            raise ConfigError("target_hz must be positive")
        if self.model_preset not in MODEL_PRESETS:
            raise ConfigError(f"unknown model preset {self.model_preset!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        self.bandpass.check(self.target_hz)
        if self.scalogram.fmax_hz >= self.target_hz / 2:
            raise ConfigError("scalogram fmax must lie below the Nyquist frequency")

    def model_config(self, num_classes: int, class_names=()) -> ModelConfig:
        h, w = self.input_shape
        return ModelConfig(input_shape=(h, w, 1), num_classes=num_classes, class_names=tuple(class_names),
                           **MODEL_PRESETS[self.model_preset])

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Apply one seed to training, SMOTE and fold assignment."""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            smote=replace(self.smote, rng_seed=seed),
            cv_seed=seed,
        )

    # -- INI round trip ----------------------------------------------------

    _SECTIONS = {
        "outliers": OutlierParams,
        "bandpass": BandpassParams,
        "segment": SegmentPlan,
        "scalogram": ScalogramSettings,
        "train": TrainConfig,
        "smote": SmoteParams,
    }

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["pipeline"] = {
            "target_hz": str(self.target_hz),
            "input_shape": f"{self.input_shape[0]}x{self.input_shape[1]}",
            "model_preset": self.model_preset,
            "k": str(self.k),
            "cv_seed": str(self.cv_seed),
            "calibration_samples": str(self.calibration_samples),
            "bench_runs": str(self.bench_runs),
        }
        for name in self._SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: str(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "PipelineConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        kw = {}
        try:
            if cp.has_section("pipeline"):
                sec = cp["pipeline"]
                conv = {"target_hz": int, "model_preset": str, "k": int, "cv_seed": int,
                        "calibration_samples": int, "bench_runs": int}
                for key, value in sec.items():
                    if key == "input_shape":
                        h, w = value.lower().split("x")
                        kw["input_shape"] = (int(h), int(w))
                    elif key in conv:
                        kw[key] = conv[key](value)
                    else:
                        raise ConfigError(f"unknown key [pipeline] {key}")
            for name, typ in cls._SECTIONS.items():
                if not cp.has_section(name):
                    continue
                types = {f.name: f.type for f in fields(typ)}
                defaults = typ()
                sub = {}
                for key, value in cp[name].items():
                    if key not in types:
                        raise ConfigError(f"unknown key [{name}] {key}")
                    kind = type(getattr(defaults, key))
                    sub[key] = kind(value) if kind is not str else value
                kw[name] = typ(**sub)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path=None) -> "PipelineConfig":
        if path is None:
            return cls.from_ini(default_config_text())
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)


def default_config_text() -> str:
    return resources.files("murmurkit").joinpath("data/default.ini").read_text(encoding="utf-8")


def clean_signal(sig: AudioSignal, cfg: PipelineConfig) -> AudioSignal:
    """Resample, clip outliers and band-pass one decoded recording."""
    sig = resample(sig, cfg.target_hz)
    sig = remove_outliers(sig, cfg.outliers)
    return butterworth_bandpass(sig, cfg.bandpass)


def segment_features(seg: AudioSignal, cfg: PipelineConfig) -> np.ndarray:
    """Flattened ``(S' * T',)`` model input for one segment."""
    sc = cwt(seg, cfg.scalogram.grid(), MorletParams(cfg.scalogram.n_cycles),
             hop=default_hop(len(seg), cfg.scalogram.columns))
    return to_model_input(sc, cfg.input_shape).ravel()


def signal_features(sig: AudioSignal, cfg: PipelineConfig) -> np.ndarray:
    """``(n_segments, D)`` features for a decoded recording."""
    segs = segment(clean_signal(sig, cfg), cfg.segment)
    d = cfg.input_shape[0] * cfg.input_shape[1]
    if not segs:
        return np.empty((0, d))
    return np.stack([segment_features(s, cfg) for s in segs])


def file_features(path, cfg: PipelineConfig) -> np.ndarray:
    sig, _ = read_wav(path)
    return signal_features(sig, cfg)
