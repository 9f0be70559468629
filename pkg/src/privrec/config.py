"""Run configuration: one structured file, flag overrides, named presets.

Every default that has a published setting uses it: clip scales delta=0.2 /
theta=0.1, noise intensities lambda_I=1.2 / lambda_g=0.01, learning rate
0.05, 2% client sampling, 4 negatives per positive, 128-unit attention
hidden layer, title cap 30, history cap 50. The clustering threshold
defaults to 1.0 (the alternative published value 2.0 stays reachable via
config). The "desk" preset shrinks dimensions for laptop-scale runs; the
"paper" preset restores the full-scale dimensions (256-dim embeddings, 16x16
self-attention, 30 interest embeddings).
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .federated import FedConfig
from .ranking import RankingConfig
from .recall import LdpConfig, RecallConfig


@dataclass
class DataSection:
    path: str = None  # directory with news.tsv / behaviors.tsv; None -> synthetic
    eval_boundary: int = None  # timestamp split; None -> from ground_truth.json
    n_users: int = 200
    n_news: int = 500
    n_topics: int = 8
    topics_per_user: int = 3
    clicks_per_user: int = 20
    impression_size: int = 10
    p_click: float = 0.8
    vector_dim: int = 16


@dataclass
class ModelSection:
    dim: int = 32
    heads: int = 4
    head_dim: int = 8
    att_hidden: int = 128
    word_dim: int = 32
    n_bie: int = 8
    cluster_threshold: float = 1.0
    delta: float = 0.2
    lambda_interest: float = 1.2
    k_neg: int = 4
    dropout: float = 0.2
    noise_in_training: bool = True


@dataclass
class FedSection:
    sample_ratio: float = 0.02
    clip_scale: float = 0.1
    noise: float = 0.01
    learning_rate: float = 0.05
    rounds: int = 300
    window: int = 20
    tolerance: float = 1e-3


@dataclass
class EvalSection:
    recall_total: int = 400
    k_list: list = field(default_factory=lambda: [100, 200, 300, 400])
    display: int = 10
    exclude_history: bool = False


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    federated: FedSection = field(default_factory=FedSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)

    def recall_config(self):
        m = self.model
        return RecallConfig(
            dim=m.dim,
            heads=m.heads,
            head_dim=m.head_dim,
            att_hidden=m.att_hidden,
            n_bie=m.n_bie,
            cluster_threshold=m.cluster_threshold,
            ldp=LdpConfig(delta=m.delta, lambda_i=m.lambda_interest),
            k_neg=m.k_neg,
            noise_in_training=m.noise_in_training,
            dropout=m.dropout,
        )

    def ranking_config(self):
        m = self.model
        return RankingConfig(
            word_dim=m.word_dim,
            dim=m.dim,
            heads=m.heads,
            head_dim=m.head_dim,
            att_hidden=m.att_hidden,
            k_neg=m.k_neg,
            dropout=m.dropout,
        )

    def fed_config(self):
        f = self.federated
        return FedConfig(
            sample_ratio=f.sample_ratio,
            clip_scale=f.clip_scale,
            noise=f.noise,
            learning_rate=f.learning_rate,
            max_rounds=f.rounds,
            window=f.window,
            tolerance=f.tolerance,
            seed=self.seed,
        )

    def synthetic_spec(self):
        from .dataset import SyntheticSpec

        d = self.data
        return SyntheticSpec(
            n_users=d.n_users,
            n_news=d.n_news,
            n_topics=d.n_topics,
            topics_per_user=d.topics_per_user,
            clicks_per_user=d.clicks_per_user,
            impression_size=d.impression_size,
            p_click=d.p_click,
            seed=self.seed,
            dim=d.vector_dim,
        )


PRESETS = {
    "desk": {},
    "paper": {
        "model": {
            "dim": 256,
            "heads": 16,
            "head_dim": 16,
            "word_dim": 300,
            "n_bie": 30,
        }
    },
}


def _apply(cfg_dict, updates):
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(cfg_dict.get(key), dict):
            _apply(cfg_dict[key], value)
        else:
            if key not in cfg_dict:
                raise KeyError(f"unknown config key '{key}'")
            cfg_dict[key] = value


def _from_dict(d):
    return RunConfig(
        data=DataSection(**d["data"]),
        model=ModelSection(**d["model"]),
        federated=FedSection(**d["federated"]),
        eval=EvalSection(**d["eval"]),
        seed=d["seed"],
    )


def load_config(path=None, preset="desk", overrides=None) -> RunConfig:
    """Defaults <- preset <- config file <- overrides, later wins."""
    if preset not in PRESETS:
        raise KeyError(f"unknown preset '{preset}'")
    base = RunConfig().to_dict()
    _apply(base, PRESETS[preset])
    if path:
        with open(path, encoding="utf-8") as f:
            _apply(base, json.load(f))
    if overrides:
        _apply(base, overrides)
    return _from_dict(base)


def describe_config():
    """One line per config key with its default value, for --help output."""
    lines = []
    defaults = RunConfig().to_dict()
    published = {
        "model.delta": "clip scale for interest scores",
        "model.lambda_interest": "Laplace intensity on interest scores",
        "model.cluster_threshold": "clustering stop distance (published values: 1 and 2)",
        "model.k_neg": "negatives per positive",
        "model.att_hidden": "attention score network width",
        "federated.sample_ratio": "fraction of clients sampled per round",
        "federated.clip_scale": "gradient clip scale",
        "federated.noise": "Laplace intensity on gradients",
        "federated.learning_rate": "server SGD step size",
        "model.dropout": "training dropout probability",
    }

    def walk(prefix, section):
        for key, value in section.items():
            dotted = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(dotted + ".", value)
            else:
                note = published.get(dotted)
                suffix = f"  ({note})" if note else ""
                lines.append(f"  {dotted} = {value!r}{suffix}")

    walk("", defaults)
    return "\n".join(lines)
