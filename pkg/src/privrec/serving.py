"""Simulated client/server serving sessions with an auditable message boundary.

The only outbound client message is a RecallRequest carrying protected
decomposition weights and per-channel quotas; raw history (news ids, tokens,
timestamps) never crosses the boundary. Wire messages use a canonical JSON
form: fixed field order, floats as 9-significant-digit scientific notation.
Requests are padded to a fixed channel count (zero-quota uniform rows) and
quotas ride as fixed-width floats, so the request byte size carries no
side channel about history length or interest structure.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ranking import encode_news, encode_user, rank_candidates
from .recall import (
    BieBank,
    allocate_quotas,
    build_protected_query,
    merge_channels,
    recall_channel,
    unified_scores,
)

PROTOCOL_VERSION = 1

# requests always carry this many channel rows; real channels never exceed the
# 50-item history cap, so padding is always possible
PAD_CHANNELS = 50

REQUEST_FIELDS = ("session_id", "protocol_version", "alpha", "quotas")
RESPONSE_FIELDS = ("session_id", "candidates")


class ProtocolError(ValueError):
    pass


def _canon(value):
    if isinstance(value, float):
        return format(value, ".8e")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(_canon(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_canon(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"cannot canonicalize {type(value)}")


def canonical_json(fields, obj):
    """Serialize `obj` (a dict) with the given field order."""
    return "{" + ",".join(f"{json.dumps(k)}:{_canon(obj[k])}" for k in fields) + "}"


@dataclass
class RecallRequest:
    session_id: str
    alpha: np.ndarray  # (C, B), rows sum to 1
    quotas: list
    protocol_version: int = PROTOCOL_VERSION

    def serialize(self):
        # quotas go out as floats: the canonical float form is fixed width,
        # so quota magnitudes do not modulate the message size
        return canonical_json(
            REQUEST_FIELDS,
            {
                "session_id": self.session_id,
                "protocol_version": self.protocol_version,
                "alpha": [[float(x) for x in row] for row in self.alpha],
                "quotas": [float(q) for q in self.quotas],
            },
        )

    @classmethod
    def parse(cls, text):
        data = json.loads(text)
        if set(data) != set(REQUEST_FIELDS):
            raise ProtocolError(f"unexpected request fields: {sorted(data)}")
        alpha = np.asarray(data["alpha"], dtype=np.float64)
        if alpha.ndim != 2:
            raise ProtocolError("alpha must be a 2-D matrix")
        return cls(
            session_id=data["session_id"],
            alpha=alpha,
            quotas=[int(round(float(q))) for q in data["quotas"]],
            protocol_version=int(data["protocol_version"]),
        )


@dataclass
class RecallResponse:
    session_id: str
    candidates: list  # list of {"news_id": str, "title_tokens": [int]}

    def serialize(self):
        return canonical_json(
            RESPONSE_FIELDS,
            {"session_id": self.session_id, "candidates": self.candidates},
        )

    @classmethod
    def parse(cls, text):
        data = json.loads(text)
        if set(data) != set(RESPONSE_FIELDS):
            raise ProtocolError(f"unexpected response fields: {sorted(data)}")
        return cls(session_id=data["session_id"], candidates=data["candidates"])


@dataclass
class ErrorResponse:
    session_id: str
    error: str

    def serialize(self):
        return canonical_json(
            ("session_id", "error"),
            {"session_id": self.session_id, "error": self.error},
        )


@dataclass
class ClientStore:
    """Client-local state. Never serialized into an outbound message."""

    history: list = field(default_factory=list)  # clicked news ids, cap 50
    displayed_log: list = field(default_factory=list)
    click_log: list = field(default_factory=list)
    news_titles: dict = field(default_factory=dict)  # news_id -> token ids
    max_history: int = 50
    _cached_query: tuple = field(default=None, repr=False)

    def add_click(self, news_id):
        self.click_log.append(news_id)
        self.history.append(news_id)
        while len(self.history) > self.max_history:
            self.history.pop(0)
        self._cached_query = None

    def record_display(self, news_ids):
        self.displayed_log.append(list(news_ids))


# -- client side ------------------------------------------------------------------


def pad_query(alpha, quotas, n_channels):
    """Pad to exactly `n_channels` rows with zero-quota uniform channels."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n, n_bie = alpha.shape
    if n > n_channels:
        raise ProtocolError(f"{n} channels exceed the pad width {n_channels}")
    if n == n_channels:
        return alpha, list(quotas)
    filler = np.full((n_channels - n, n_bie), 1.0 / n_bie)
    return np.vstack([alpha, filler]), list(quotas) + [0] * (n_channels - n)


def client_build_request(store: ClientStore, recall_params, recall_cfg, total_quota,
                         rng, news_rep_fn, session_id, use_cache=False,
                         pad_channels=PAD_CHANNELS):
    """Build the protected recall request from local state.

    Cold users (empty history) send a single uniform-weight channel with the
    full quota. With use_cache, the protected weights are reused until the
    history changes (precomputed-query optimization).
    """
    if use_cache and store._cached_query is not None:
        alpha, quotas = store._cached_query
        return RecallRequest(session_id=session_id, alpha=alpha, quotas=quotas)
    n_bie = recall_cfg.n_bie
    if not store.history:
        alpha = np.full((1, n_bie), 1.0 / n_bie)
        quotas = [int(total_quota)]
    else:
        reps = np.stack([news_rep_fn(nid) for nid in store.history])
        query = build_protected_query(reps, recall_params, recall_cfg, total_quota, rng)
        alpha, quotas = query.alpha, query.quotas
    if pad_channels:
        alpha, quotas = pad_query(alpha, quotas, pad_channels)
    if use_cache:
        store._cached_query = (alpha, quotas)
    return RecallRequest(session_id=session_id, alpha=alpha, quotas=quotas)


def client_rank_and_display(store: ClientStore, response: RecallResponse,
                            ranking_params, ranking_cfg, top):
    """Rank received candidates with the local model and record the display."""
    candidates = response.candidates
    if top > len(candidates):
        warnings.warn(
            f"display size {top} exceeds {len(candidates)} candidates; clamping"
        )
        top = len(candidates)
    for c in candidates:
        store.news_titles[c["news_id"]] = list(c["title_tokens"])
    cand_reps = np.stack(
        [encode_news(c["title_tokens"], ranking_params, ranking_cfg) for c in candidates]
    )
    if store.history:
        hist_reps = np.stack(
            [
                encode_news(store.news_titles[nid], ranking_params, ranking_cfg)
                for nid in store.history
            ]
        )
        user_vec = encode_user(hist_reps, ranking_params, ranking_cfg)
    else:
        user_vec = np.zeros(cand_reps.shape[1])
    order, _ = rank_candidates(user_vec, cand_reps, top)
    displayed = [candidates[i]["news_id"] for i in order]
    store.record_display(displayed)
    return displayed


# -- server side --------------------------------------------------------------------


@dataclass
class NewsPool:
    """Server-side news table: aligned ids, token lists and representations."""

    news_ids: list
    titles: list  # token-id lists, aligned with news_ids
    reps: np.ndarray  # (N, d)

    def index_of(self, news_id):
        if not hasattr(self, "_index"):
            self._index = {nid: i for i, nid in enumerate(self.news_ids)}
        return self._index[news_id]


def server_handle_request(request: RecallRequest, bank: BieBank, pool: NewsPool):
    """Aggregate protected weights into channel representations and recall.

    Returns a RecallResponse, or an ErrorResponse for malformed weights.
    Stateless: identical requests always produce identical responses.
    """
    alpha = np.asarray(request.alpha, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[1] != bank.n or alpha.shape[0] != len(request.quotas):
        return ErrorResponse(request.session_id, "alpha shape mismatch")
    if not np.all(np.isfinite(alpha)):
        return ErrorResponse(request.session_id, "alpha contains non-finite entries")
    if np.any(np.abs(alpha.sum(axis=1) - 1.0) > 1e-6):
        return ErrorResponse(request.session_id, "alpha rows must sum to 1")
    if any(q < 0 for q in request.quotas):
        return ErrorResponse(request.session_id, "negative quota")

    total = sum(int(q) for q in request.quotas)
    reps = alpha @ bank.values
    n_avail = pool.reps.shape[0]
    channel_lists = [
        recall_channel(reps[i], pool.reps, min(int(q), n_avail))
        for i, q in enumerate(request.quotas)
    ]
    ratios = (
        [q / total for q in request.quotas]
        if total > 0
        else [1.0 / len(request.quotas)] * len(request.quotas)
    )
    scores = unified_scores(pool.reps, reps, ratios)
    merged = merge_channels(channel_lists, scores, total)
    candidates = [
        {"news_id": pool.news_ids[i], "title_tokens": list(pool.titles[i])}
        for i in merged
    ]
    return RecallResponse(session_id=request.session_id, candidates=candidates)


# -- session simulation -----------------------------------------------------------


def topic_click_model(user_topics, news_topics, p_click):
    """Click displayed news whose hidden topic matches a user topic with
    probability p_click."""

    def model(user_id, news_id, rng):
        return (
            news_topics[news_id] in user_topics[user_id]
            and rng.random() < p_click
        )

    return model


def simulate_sessions(stores, pool, recall_params, recall_cfg, ranking_params,
                      ranking_cfg, rounds, total_quota, top, click_model, seed,
                      use_cache=False):
    """Run serving rounds for every client store; returns the message trace.

    Each trace record keeps the serialized request exactly as sent, plus the
    history snapshot at send time for privacy audits.
    """
    rng = np.random.default_rng([seed, 0x5E55])
    bank = BieBank(
        keys=recall_params["bie.keys"], values=recall_params["bie.values"]
    )
    rep_cache = {}

    def news_rep(nid):
        if nid not in rep_cache:
            raise KeyError(f"unknown news id {nid}")
        return rep_cache[nid]

    for nid, rep in zip(pool.news_ids, pool.reps):
        rep_cache[nid] = rep

    trace = []
    for rnd in range(rounds):
        for uid in sorted(stores):
            store = stores[uid]
            session_id = f"{uid}-r{rnd}"
            history_at_send = list(store.history)
            request = client_build_request(
                store, recall_params, recall_cfg, total_quota, rng, news_rep,
                session_id, use_cache=use_cache,
            )
            wire_request = request.serialize()
            response = server_handle_request(RecallRequest.parse(wire_request), bank, pool)
            if isinstance(response, ErrorResponse):
                trace.append(
                    {
                        "round": rnd,
                        "user": uid,
                        "request": wire_request,
                        "error": response.error,
                        "history_at_send": history_at_send,
                    }
                )
                continue
            wire_response = response.serialize()
            displayed = client_rank_and_display(
                store, RecallResponse.parse(wire_response), ranking_params,
                ranking_cfg, top,
            )
            clicked = [nid for nid in displayed if click_model(uid, nid, rng)]
            for nid in clicked:
                store.add_click(nid)
            trace.append(
                {
                    "round": rnd,
                    "user": uid,
                    "request": wire_request,
                    "response": wire_response,
                    "displayed": displayed,
                    "clicked": clicked,
                    "history_at_send": history_at_send,
                }
            )
    return trace


def audit_trace(trace):
    """Count history leaks: history news ids appearing in outbound requests.

    Returns a summary dict; "leaks" must be zero for a healthy boundary.
    """
    leaks = 0
    checked = 0
    for record in trace:
        request = record["request"]
        checked += 1
        for nid in record["history_at_send"]:
            if nid in request:
                leaks += 1
    return {"messages_checked": checked, "leaks": leaks}


def write_trace(trace, path):
    with open(path, "w", encoding="utf-8") as f:
        for record in trace:
            f.write(json.dumps(record, sort_keys=True) + "\n")
