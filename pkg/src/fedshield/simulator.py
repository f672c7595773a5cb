"""End-to-end federated experiment orchestration.

A run builds one global dataset (synthetic blobs or a CSV file), holds out a
stratified test split, partitions the training rows across clients with a
Dirichlet draw, fixes the adversary set, and then plays T sequential rounds:
sample participants, local SGD per client (malicious clients train on their
label-flipped copy once adversaries are active), optional per-update
clipping + Gaussian noise, robust aggregation under the configured rule, a
global weight update, and held-out evaluation.

Everything is derived from ``master_seed`` through numpy SeedSequence
spawning with fixed purpose tags, so two runs of one config are bitwise
identical apart from wall-clock timings.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import aggregation, data as datamod, gshield, metrics, model as modelmod
from .aggregation import AggregationResult, ClientUpdate
from .data import AttackSpec, Dataset
from .gshield import BenignProfile
from .model import ModelLayout, TrainConfig, WeightVector

AGGREGATORS = ("fedavg", "krum", "median", "tmean", "flamelite", "gshield")

# purpose tags for seed derivation; never reorder (it would change results)
_SEED_DATA = 0
_SEED_SPLIT = 1
_SEED_PARTITION = 2
_SEED_ADVERSARIES = 3
_SEED_INIT = 4
_SEED_FLIP = 5
_SEED_SAMPLING = 6
_SEED_TRAIN = 7
_SEED_DP = 8
_SEED_AGG = 9


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field name."""

    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


class RoundFailedError(RuntimeError):
    """A round aborted the run; carries the 1-based round index."""

    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index} failed: {cause}")
        self.round_index = round_index


@dataclass(frozen=True)
class DataSpec:
    """Where the experiment's samples come from."""

    source: str = "synthetic"  # "synthetic" | "csv"
    num_classes: int = 4
    samples_per_class: int = 250
    dim: int = 8
    class_separation: float = 6.0
    csv_path: str = ""
    label_column: str | int = "label"


@dataclass(frozen=True)
class DpConfig:
    """Central-DP hook: per-update L2 clipping plus Gaussian noise with
    sigma = noise_multiplier * clip_norm, applied before aggregation."""

    enabled: bool = False
    clip_norm: float = 1.0
    noise_multiplier: float = 0.1


@dataclass(frozen=True)
class FederationConfig:
    """Full description of one experiment."""

    num_clients: int = 20
    participation_fraction: float = 0.5
    rounds: int = 40
    t_safe: int = 5
    pmr: float = 0.25
    attack: AttackSpec = AttackSpec(source_class=0, target_class=1, flip_fraction=1.0)
    attack_during_safe_phase: bool = False
    aggregator: str = "gshield"
    train: TrainConfig = TrainConfig(epochs=20, batch_size=200, learning_rate=0.05)
    hidden_dim: int = 0
    data: DataSpec = DataSpec()
    dirichlet_alpha: float = 0.5
    z_alpha: float = 2.0
    dp: DpConfig = DpConfig()
    master_seed: int = 1
    eta_server: float = 1.0
    test_fraction: float = 0.2
    krum_num_malicious: int | None = None  # None = ceil(0.25 * K)
    trim_fraction: float = 0.2
    flame_noise_scale: float = 0.0


@dataclass
class RoundRecord:
    """Metrics and bookkeeping for one completed round."""

    round: int
    participant_ids: list[int]
    malicious_participant_ids: list[int]
    selected_ids: list[int]
    rejected_ids: list[int]
    f1: float
    source_recall: float
    detection_precision: float
    detection_recall: float
    aggregation_wall_time_seconds: float


def validate_config(cfg: FederationConfig) -> None:
    """Field-by-field validation; raises ConfigError naming the field."""
    if cfg.num_clients < 2:
        raise ConfigError("num_clients", "need at least 2 clients")
    if not 0.0 < cfg.participation_fraction <= 1.0:
        raise ConfigError("participation_fraction", "must be in (0, 1]")
    if cfg.rounds < 1:
        raise ConfigError("rounds", "need at least one round")
    if not 0.0 <= cfg.pmr < 0.5:
        raise ConfigError("pmr", f"honest majority requires 0 <= pmr < 0.5, got {cfg.pmr}")
    if cfg.t_safe < 0 or cfg.t_safe >= cfg.rounds:
        raise ConfigError("t_safe", f"must satisfy 0 <= t_safe < rounds, got {cfg.t_safe}")
    if cfg.aggregator not in AGGREGATORS:
        raise ConfigError("aggregator", f"unknown rule {cfg.aggregator!r}; choose from {AGGREGATORS}")
    if cfg.hidden_dim < 0:
        raise ConfigError("hidden_dim", "must be >= 0")
    if not cfg.z_alpha > 0:
        raise ConfigError("z_alpha", "must be positive")
    if cfg.dirichlet_alpha <= 0:
        raise ConfigError("dirichlet_alpha", "must be positive")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError("test_fraction", "must be in (0, 1)")
    if cfg.eta_server <= 0:
        raise ConfigError("eta_server", "must be positive")
    if not 0.0 <= cfg.trim_fraction < 0.5:
        raise ConfigError("trim_fraction", "must be in [0, 0.5)")
    if cfg.krum_num_malicious is not None and cfg.krum_num_malicious < 0:
        raise ConfigError("krum_num_malicious", "must be >= 0 (or omitted for automatic)")
    if cfg.flame_noise_scale < 0:
        raise ConfigError("flame_noise_scale", "must be >= 0")
    if cfg.dp.clip_norm <= 0:
        raise ConfigError("dp.clip_norm", "must be positive")
    if cfg.dp.noise_multiplier < 0:
        raise ConfigError("dp.noise_multiplier", "must be >= 0")
    if cfg.data.source not in ("synthetic", "csv"):
        raise ConfigError("data.source", f"unknown source {cfg.data.source!r}")
    if cfg.data.source == "csv" and not cfg.data.csv_path:
        raise ConfigError("data.csv_path", "required when data.source = csv")
    try:
        cfg.attack.validate_for(cfg.data.num_classes if cfg.data.source == "synthetic" else 1 << 30)
    except datamod.InvalidSpecError as exc:
        raise ConfigError("attack", str(exc)) from exc


def _seed(cfg_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=cfg_seed, spawn_key=tuple(path))


def _seed_int(cfg_seed: int, *path: int) -> int:
    return int(_seed(cfg_seed, *path).generate_state(1)[0])


def assign_adversaries(num_clients: int, pmr: float, seed: int) -> set[int]:
    """Uniformly chosen floor(pmr * N) distinct client ids, fixed per run."""
    if not 0.0 <= pmr < 0.5:
        raise ConfigError("pmr", f"honest majority requires 0 <= pmr < 0.5, got {pmr}")
    count = int(pmr * num_clients)
    if count == 0:
        return set()
    rng = np.random.default_rng(_seed(seed, _SEED_ADVERSARIES))
    return set(rng.choice(num_clients, size=count, replace=False).tolist())


@dataclass
class ExperimentState:
    """Mutable state threaded through the round loop."""

    cfg: FederationConfig
    layout: ModelLayout
    weights: WeightVector
    client_data: list[Dataset]
    poisoned_data: dict[int, Dataset]
    test_data: Dataset
    adversaries: set[int]
    profile: BenignProfile
    round_records: list[RoundRecord] = field(default_factory=list)


def _load_base_dataset(cfg: FederationConfig) -> Dataset:
    if cfg.data.source == "csv":
        return datamod.load_csv(cfg.data.csv_path, cfg.data.label_column)
    return datamod.generate_synthetic(
        num_classes=cfg.data.num_classes,
        samples_per_class=cfg.data.samples_per_class,
        dim=cfg.data.dim,
        class_separation=cfg.data.class_separation,
        seed=_seed_int(cfg.master_seed, _SEED_DATA),
    )


def setup_experiment(cfg: FederationConfig) -> ExperimentState:
    """Build data, partition, adversaries, weights, and the defense profile."""
    validate_config(cfg)
    base = _load_base_dataset(cfg)
    cfg.attack.validate_for(base.num_classes)
    train_set, test_set = datamod.stratified_split(
        base, cfg.test_fraction, seed=_seed_int(cfg.master_seed, _SEED_SPLIT)
    )
    plan = datamod.dirichlet_partition(
        train_set,
        num_clients=cfg.num_clients,
        alpha=cfg.dirichlet_alpha,
        seed=_seed_int(cfg.master_seed, _SEED_PARTITION),
    )
    client_data = [train_set.subset(idx) for idx in plan.client_indices]
    adversaries = assign_adversaries(cfg.num_clients, cfg.pmr, cfg.master_seed)
    poisoned: dict[int, Dataset] = {}
    for cid in sorted(adversaries):
        with warnings.catch_warnings():
            # clients without source-class samples simply contribute clean data
            warnings.simplefilter("ignore", datamod.NoSourceSamplesWarning)
            poisoned[cid] = datamod.flip_labels(
                client_data[cid], cfg.attack, seed=_seed_int(cfg.master_seed, _SEED_FLIP, cid)
            )
    layout = ModelLayout(
        input_dim=base.dim, hidden_dim=cfg.hidden_dim, num_classes=base.num_classes
    )
    weights = modelmod.init_weights(layout, seed=_seed_int(cfg.master_seed, _SEED_INIT))
    profile = BenignProfile.fresh(cfg.t_safe, cfg.z_alpha)
    return ExperimentState(
        cfg=cfg,
        layout=layout,
        weights=weights,
        client_data=client_data,
        poisoned_data=poisoned,
        test_data=test_set,
        adversaries=adversaries,
        profile=profile,
    )


def _apply_dp(updates: list[ClientUpdate], dp: DpConfig, rng: np.random.Generator) -> list[ClientUpdate]:
    """Clip each update to dp.clip_norm and add Gaussian noise with
    sigma = noise_multiplier * clip_norm. Updates are processed in
    ascending client id order so the noise draws are reproducible."""
    noised = []
    sigma = dp.noise_multiplier * dp.clip_norm
    for update in sorted(updates, key=lambda u: u.client_id):
        grad = update.gradient
        norm = float(np.linalg.norm(grad))
        if norm > dp.clip_norm:
            grad = grad * (dp.clip_norm / norm)
        if sigma > 0:
            grad = grad + rng.normal(0.0, sigma, size=grad.shape)
        noised.append(replace(update, gradient=grad))
    return noised


def _aggregate(
    state: ExperimentState, round_t: int, updates: list[ClientUpdate]
) -> AggregationResult:
    cfg = state.cfg
    name = cfg.aggregator
    if name == "fedavg":
        return aggregation.fedavg(updates)
    if name == "krum":
        f = cfg.krum_num_malicious
        if f is None:
            # a quarter of the round, capped at the largest f krum supports
            f = min(math.ceil(0.25 * len(updates)), max(0, (len(updates) - 3) // 2))
        return aggregation.krum(updates, num_malicious=f)
    if name == "median":
        return aggregation.coord_median(updates)
    if name == "tmean":
        return aggregation.trimmed_mean(updates, cfg.trim_fraction)
    if name == "flamelite":
        return aggregation.flame_lite(
            updates, cfg.flame_noise_scale, seed=_seed_int(cfg.master_seed, _SEED_AGG, round_t)
        )
    last_layer = [
        (u.client_id, modelmod.last_layer_slice(u.gradient, state.layout)) for u in updates
    ]
    result, state.profile, _ = gshield.gshield_aggregate(
        updates,
        last_layer,
        state.profile,
        round_t,
        seed=_seed_int(cfg.master_seed, _SEED_AGG, round_t),
    )
    return result


def run_round(state: ExperimentState, round_t: int) -> RoundRecord:
    """Play one round and append its record to the state."""
    cfg = state.cfg
    k = round(cfg.participation_fraction * cfg.num_clients)
    k = max(1, min(cfg.num_clients, k))
    sample_rng = np.random.default_rng(_seed(cfg.master_seed, _SEED_SAMPLING, round_t))
    participants = sorted(sample_rng.choice(cfg.num_clients, size=k, replace=False).tolist())

    attack_active = cfg.attack_during_safe_phase or round_t > cfg.t_safe
    updates: list[ClientUpdate] = []
    for cid in participants:
        local = state.client_data[cid]
        if cid in state.adversaries and attack_active:
            local = state.poisoned_data[cid]
        train_cfg = replace(cfg.train, seed=_seed_int(cfg.master_seed, _SEED_TRAIN, round_t, cid))
        _, cumulative = modelmod.local_train(state.weights, local, train_cfg)
        updates.append(ClientUpdate(client_id=cid, gradient=cumulative, num_samples=local.num_samples))

    if cfg.dp.enabled:
        dp_rng = np.random.default_rng(_seed(cfg.master_seed, _SEED_DP, round_t))
        updates = _apply_dp(updates, cfg.dp, dp_rng)

    result = _aggregate(state, round_t, updates)
    # clients send summed gradients; scaling by the local rate turns the
    # aggregate back into weight-update units, so eta_server = 1.0
    # reproduces plain weight averaging when everyone is selected
    step = cfg.eta_server * cfg.train.learning_rate
    state.weights = WeightVector(
        state.weights.values - step * result.aggregate, state.layout
    )

    predictions = modelmod.predict(state.weights, state.test_data.features)
    f1 = metrics.macro_f1(state.test_data.labels, predictions, state.test_data.num_classes)
    srecall = metrics.source_recall(state.test_data.labels, predictions, cfg.attack.source_class)
    malicious_participants = sorted(set(participants) & state.adversaries)
    precision, recall = metrics.detection_quality(
        result.rejected_ids, malicious_participants, participants
    )
    record = RoundRecord(
        round=round_t,
        participant_ids=participants,
        malicious_participant_ids=malicious_participants,
        selected_ids=sorted(result.selected_ids),
        rejected_ids=sorted(result.rejected_ids),
        f1=f1,
        source_recall=srecall,
        detection_precision=precision,
        detection_recall=recall,
        aggregation_wall_time_seconds=result.wall_time,
    )
    state.round_records.append(record)
    return record


def run_experiment(cfg: FederationConfig, weights_out: str | Path | None = None) -> list[RoundRecord]:
    """Run all T rounds from a fresh seeded state.

    Bitwise deterministic for a fixed config apart from the wall-time
    fields. A round failure aborts the run with RoundFailedError carrying
    the round index. When ``weights_out`` is given the final global weights
    are saved there as an .npy file.
    """
    state = setup_experiment(cfg)
    for t in range(1, cfg.rounds + 1):
        try:
            run_round(state, t)
        except Exception as exc:  # noqa: BLE001 - wrap with round context
            raise RoundFailedError(t, exc) from exc
    if weights_out is not None:
        np.save(Path(weights_out), state.weights.values)
    return state.round_records
