"""Privacy-preserving two-stage news recommendation, desk scale.

Multi-interest candidate recall behind a local-differential-privacy boundary,
an NRMS-style ranking model, a simulated client/server serving protocol and a
federated training loop, all in numpy.
"""

from .clustering import ClusterAssignment, cluster_average_linkage
from .federated import (
    FedConfig,
    GradientUpdate,
    aggregate,
    privacy_budget,
    protect_gradients,
    sample_clients,
    train,
)
from .metrics import auc, mrr, ndcg_at_k, privacy_recall_rate, recall_at_k
from .ranking import RankingConfig, Vocab, encode_news, encode_user, rank_candidates
from .recall import (
    BieBank,
    LdpConfig,
    ProtectedQuery,
    RecallConfig,
    aggregate_interest,
    allocate_quotas,
    decompose_interest,
    encode_interest_channels,
    merge_channels,
    perturb_scores,
    recall_channel,
    unified_score,
)

__version__ = "0.1.0"
