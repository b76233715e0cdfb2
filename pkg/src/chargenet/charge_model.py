"""The joint model: fact encoding with global attention contexts, top-k article
encoding and aggregation driven by fact-conditioned dynamic contexts, two fully
connected layers into a softmax charge distribution, and the combined
charge/attention training objective.

Variants select the classifier input and the supervision signal:

=================  =========================  ==========================
variant            classifier input           article slots
=================  =========================  ==========================
fact_only          fact embedding             none
art_only           aggregated articles        extractor top-k
fact_art           fact + articles            extractor top-k
fact_supv_art      fact + articles            extractor top-k, attention
                                              supervised toward gold
fact_gold_art      fact + articles            gold articles (upper bound)
=================  =========================  ==========================
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from . import metrics as mx
from . import ndtensor as nd
from .article_extractor import ExtractorBank, article_sort_key, extract_top_k
from .corpus import CaseRecord, ParseError, simple_tokenize
from .encoders import (
    AttentivePoolParams,
    BiGruParams,
    DocEncoderParams,
    attentive_pool,
    bigru_encode,
    encode_documents,
)
from .ndtensor import DomainError, SgdConfig, StateError, Tape, Tensor

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1

# Randomly initialized embedding tables mimic the spread of pretrained vectors;
# recurrent and projection weights keep the conservative 0.08 range.
EMB_INIT_SCALE = 0.5


class Variant(str, Enum):
    FACT_ONLY = "fact_only"
    ART_ONLY = "art_only"
    FACT_ART = "fact_art"
    FACT_SUPV_ART = "fact_supv_art"
    FACT_GOLD_ART = "fact_gold_art"


ARTICLE_VARIANTS = {Variant.ART_ONLY, Variant.FACT_ART, Variant.FACT_SUPV_ART,
                    Variant.FACT_GOLD_ART}
EXTRACTOR_VARIANTS = {Variant.ART_ONLY, Variant.FACT_ART, Variant.FACT_SUPV_ART}


@dataclass
class ModelConfig:
    word_emb_dim: int = 100
    pos_emb_dim: int = 50
    gru_hidden: int = 75
    fc1_dim: int = 200
    fc2_dim: int = 150
    k: int = 20
    beta: float = 0.1
    tau: float = 0.4
    lr: float = 0.1
    batch: int = 8
    variant: Variant = Variant.FACT_SUPV_ART
    tie_article_encoder: bool = False
    max_epochs: int = 50
    patience: int = 5

    def __post_init__(self):
        self.variant = Variant(self.variant)
        for name in ("word_emb_dim", "pos_emb_dim", "gru_hidden", "fc1_dim",
                     "fc2_dim", "k", "batch", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if self.beta < 0:
            raise DomainError("beta must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise DomainError("tau must lie in (0, 1)")
        if self.lr <= 0:
            raise DomainError("lr must be positive")

    @property
    def input_dim(self) -> int:
        return self.word_emb_dim + self.pos_emb_dim

    @property
    def state_dim(self) -> int:
        return 2 * self.gru_hidden

    def uses_articles(self) -> bool:
        return self.variant in ARTICLE_VARIANTS

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["variant"] = self.variant.value
        return out


@dataclass
class ModelParams:
    """Every trainable tensor; article-side fields are None for fact_only."""

    word_emb: Tensor
    pos_emb: Tensor
    fact_enc: DocEncoderParams
    art_enc: DocEncoderParams | None
    w_w: Tensor | None
    b_w: Tensor | None
    w_s: Tensor | None
    b_s: Tensor | None
    agg_gru: BiGruParams | None
    agg_pool: AttentivePoolParams | None
    w_d: Tensor | None
    b_d: Tensor | None
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    out_w: Tensor
    out_b: Tensor

    @classmethod
    def create(cls, config: ModelConfig, n_words: int, n_pos: int, n_charges: int,
               rng: np.random.Generator) -> "ModelParams":
        s = config.state_dim
        word_emb = nd.parameter((n_words, config.word_emb_dim), rng,
                                scale=EMB_INIT_SCALE, name="emb.word")
        pos_emb = nd.parameter((n_pos, config.pos_emb_dim), rng,
                               scale=EMB_INIT_SCALE, name="emb.pos")
        fact_enc = DocEncoderParams.create(config.input_dim, config.gru_hidden, rng,
                                           "fact", global_context=True)
        art_enc = w_w = b_w = w_s = b_s = agg_gru = agg_pool = w_d = b_d = None
        if config.uses_articles():
            if config.tie_article_encoder:
                art_enc = fact_enc
            else:
                art_enc = DocEncoderParams.create(config.input_dim, config.gru_hidden,
                                                  rng, "art", global_context=False)
            w_w = nd.parameter((s, s), rng, name="ctx.word.w")
            b_w = nd.zeros((s, 1), name="ctx.word.b")
            w_s = nd.parameter((s, s), rng, name="ctx.sent.w")
            b_s = nd.zeros((s, 1), name="ctx.sent.b")
            agg_gru = BiGruParams.create(s, config.gru_hidden, rng, "agg")
            agg_pool = AttentivePoolParams.create(s, rng, "agg_pool", global_context=False)
            w_d = nd.parameter((s, s), rng, name="ctx.agg.w")
            b_d = nd.zeros((s, 1), name="ctx.agg.b")
        if config.variant == Variant.FACT_ONLY or config.variant == Variant.ART_ONLY:
            fc_in = s
        else:
            fc_in = 2 * s
        return cls(
            word_emb, pos_emb, fact_enc, art_enc, w_w, b_w, w_s, b_s,
            agg_gru, agg_pool, w_d, b_d,
            nd.parameter((config.fc1_dim, fc_in), rng, name="fc1.w"),
            nd.zeros((config.fc1_dim, 1), name="fc1.b"),
            nd.parameter((config.fc2_dim, config.fc1_dim), rng, name="fc2.w"),
            nd.zeros((config.fc2_dim, 1), name="fc2.b"),
            nd.parameter((n_charges, config.fc2_dim), rng, name="out.w"),
            nd.zeros((n_charges, 1), name="out.b"),
        )

    def named(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [("emb.word", self.word_emb), ("emb.pos", self.pos_emb)]
        out.extend(self.fact_enc.named())
        if self.art_enc is not None and self.art_enc is not self.fact_enc:
            out.extend(self.art_enc.named())
        for name, t in [("ctx.word.w", self.w_w), ("ctx.word.b", self.b_w),
                        ("ctx.sent.w", self.w_s), ("ctx.sent.b", self.b_s),
                        ("ctx.agg.w", self.w_d), ("ctx.agg.b", self.b_d)]:
            if t is not None:
                out.append((name, t))
        if self.agg_gru is not None:
            out.extend(self.agg_gru.named())
        if self.agg_pool is not None:
            out.extend(self.agg_pool.named())
        out.extend([("fc1.w", self.fc1_w), ("fc1.b", self.fc1_b),
                    ("fc2.w", self.fc2_w), ("fc2.b", self.fc2_b),
                    ("out.w", self.out_w), ("out.b", self.out_b)])
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


@dataclass
class ForwardTrace:
    """Per-case intermediates kept for losses, reports, and the user-facing
    article ranking."""

    d_f: np.ndarray
    o: np.ndarray
    o_tensor: Tensor
    d_prime: np.ndarray
    word_attn: list[np.ndarray]
    sent_attn: np.ndarray
    topk: list | None = None
    extractor_scores: list[float] | None = None
    article_embeddings: np.ndarray | None = None
    alpha: np.ndarray | None = None
    alpha_tensor: Tensor | None = None
    d_a: np.ndarray | None = None


@dataclass
class ChargeModel:
    """Trained parameters plus the vocabularies needed to run them."""

    config: ModelConfig
    params: ModelParams
    word_vocab: dict[str, int]
    pos_vocab: dict[str, int]
    charge_vocab: list[str]
    article_docs: dict  # article id -> list of (word_ids, pos_ids) per sentence
    tau: float
    epochs_completed: int = 0

    def charge_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.charge_vocab)}

    def embed_tokens(self, word_ids: np.ndarray, pos_ids: np.ndarray) -> Tensor:
        return nd.concat([nd.embed(self.params.word_emb, word_ids),
                          nd.embed(self.params.pos_emb, pos_ids)], axis=0)

    def encode_fact(self, fact_ids) -> tuple[Tensor, list[np.ndarray], np.ndarray]:
        d, word_attn, sent_attn = encode_documents(
            [fact_ids], self.params.fact_enc, self.embed_tokens,
            u_word=self.params.fact_enc.word_pool.u,
            u_sent=self.params.fact_enc.sent_pool.u)
        return d, word_attn[0], sent_attn[0]


def build_vocab(cases: list[CaseRecord]) -> tuple[dict[str, int], dict[str, int]]:
    """Token and POS vocabularies with reserved padding and unknown ids."""
    words = sorted({tok for c in cases for s in c.fact for tok, _ in s})
    tags = sorted({pos for c in cases for s in c.fact for _, pos in s})
    word_vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    word_vocab.update({w: i for i, w in enumerate(words, start=2)})
    pos_vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    pos_vocab.update({t: i for i, t in enumerate(tags, start=2)})
    return word_vocab, pos_vocab


def case_to_ids(case_fact, word_vocab, pos_vocab) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.array([word_vocab.get(tok, UNK_ID) for tok, _ in sent], dtype=np.intp),
             np.array([pos_vocab.get(pos, UNK_ID) for _, pos in sent], dtype=np.intp))
            for sent in case_fact]


def tokenize_article_db(article_db: dict, word_vocab, pos_vocab) -> dict:
    out = {}
    for aid, text in article_db.items():
        sents = simple_tokenize(text)
        if not sents:
            raise DomainError(f"article {aid!r} has empty text")
        out[aid] = case_to_ids(sents, word_vocab, pos_vocab)
    return out


def apply_pretrained_embeddings(params: ModelParams, word_vocab: dict[str, int],
                                path) -> int:
    """Overwrite embedding rows from a text file of ``token v1 .. vd`` lines."""
    dim = params.word_emb.shape[1]
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(
                    f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim}")
            idx = word_vocab.get(parts[0])
            if idx is not None:
                params.word_emb.data[idx] = [float(v) for v in parts[1:]]
                loaded += 1
    return loaded


def dynamic_context(d_f: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-case attention context: an affine map of the fact embedding."""
    col = d_f if d_f.data.ndim == 2 else nd.reshape(d_f, (d_f.shape[0], 1))
    return w @ col + b


def charge_target(positive: set[str], charge_vocab: list[str]) -> np.ndarray:
    """Distribution with mass 1/m on each of the m positive charges."""
    index = {c: i for i, c in enumerate(charge_vocab)}
    hits = [index[c] for c in positive if c in index]
    if not hits:
        raise DomainError(f"no positive charge of {sorted(positive)} is in the vocabulary")
    y = np.zeros(len(charge_vocab))
    y[hits] = 1.0 / len(hits)
    return y


def attention_target(topk_ids: list, gold_ids: set, k: int) -> np.ndarray | None:
    """1/k' on gold slots; None when no gold article survived extraction."""
    if len(topk_ids) != k:
        raise DomainError(f"expected {k} slots, got {len(topk_ids)}")
    hits = [j for j, aid in enumerate(topk_ids) if aid in gold_ids]
    if not hits:
        return None
    t = np.zeros(k)
    t[hits] = 1.0 / len(hits)
    return t


def encode_articles(article_ids: list, model: ChargeModel, d_f: Tensor) -> Tensor:
    """Embed each candidate article with word/sentence contexts generated from d_f."""
    p = model.params
    docs = []
    for aid in article_ids:
        if aid not in model.article_docs:
            raise DomainError(f"article {aid!r} missing from the article database")
        docs.append(model.article_docs[aid])
    u_aw = dynamic_context(d_f, p.w_w, p.b_w)
    u_as = dynamic_context(d_f, p.w_s, p.b_s)
    a_mat, _, _ = encode_documents(docs, p.art_enc, model.embed_tokens,
                                   u_word=u_aw, u_sent=u_as)
    return a_mat


def aggregate_articles(a_mat: Tensor, model: ChargeModel,
                       d_f: Tensor) -> tuple[Tensor, Tensor]:
    """Bi-GRU over the article sequence, pooled with the fact-driven context."""
    p = model.params
    n = a_mat.shape[1]
    if n < 1:
        raise DomainError("aggregate_articles needs at least one article")
    seq = [nd.narrow(a_mat, 1, j, 1) for j in range(n)]
    states = bigru_encode(seq, p.agg_gru)
    u_ad = dynamic_context(d_f, p.w_d, p.b_d)
    return attentive_pool(states, p.agg_pool.w, u_ad)


def forward(case: CaseRecord, model: ChargeModel, bank: ExtractorBank | None = None,
            topk: list | None = None) -> ForwardTrace:
    """Run one case through the variant's graph; record on any ambient tape."""
    cfg = model.config
    p = model.params
    fact_ids = case_to_ids(case.fact, model.word_vocab, model.pos_vocab)
    d_f, word_attn, sent_attn = model.encode_fact(fact_ids)

    slots = None
    scores = None
    d_in = d_f
    a_mat = d_a = alpha = None
    if cfg.uses_articles():
        if cfg.variant == Variant.FACT_GOLD_ART:
            slots = sorted(case.gold_articles, key=article_sort_key)[:cfg.k]
        elif topk is not None:
            slots = list(topk)
        else:
            if bank is None:
                raise StateError(f"variant {cfg.variant.value} needs a trained extractor bank")
            ranked = extract_top_k(case.tokens(), bank, k=cfg.k)
            slots = [aid for aid, _ in ranked]
            scores = [s for _, s in ranked]
        a_mat = encode_articles(slots, model, d_f)
        d_a, alpha = aggregate_articles(a_mat, model, d_f)
        if cfg.variant == Variant.ART_ONLY:
            d_in = d_a
        else:
            d_in = nd.concat([d_f, d_a], axis=0)

    h1 = nd.tanh(p.fc1_w @ d_in + p.fc1_b)
    h2 = nd.tanh(p.fc2_w @ h1 + p.fc2_b)
    logits = p.out_w @ h2 + p.out_b
    o = nd.reshape(nd.softmax(logits, axis=0), (logits.shape[0],))

    return ForwardTrace(
        d_f=d_f.data.reshape(-1).copy(),
        o=o.data.copy(),
        o_tensor=o,
        d_prime=h2.data.reshape(-1).copy(),
        word_attn=word_attn,
        sent_attn=sent_attn,
        topk=slots,
        extractor_scores=scores,
        article_embeddings=None if a_mat is None else a_mat.data.copy(),
        alpha=None if alpha is None else alpha.data.reshape(-1).copy(),
        alpha_tensor=None if alpha is None else nd.reshape(alpha, (alpha.shape[0],)),
        d_a=None if d_a is None else d_a.data.reshape(-1).copy(),
    )


def joint_loss(o: Tensor, y: np.ndarray, alpha: Tensor | None,
               t: np.ndarray | None, beta: float) -> Tensor:
    """Charge cross entropy plus beta-weighted attention cross entropy.

    With beta = 0 or no attention target the result is exactly the charge
    term, the same tape node.
    """
    charge_term = nd.cross_entropy(y, o)
    if beta == 0.0 or t is None or alpha is None:
        return charge_term
    return charge_term + beta * nd.cross_entropy(t, alpha)


def predict(o: np.ndarray, tau: float) -> set[int]:
    """Indices above the threshold; an empty cut falls back to the argmax."""
    chosen = {int(i) for i in np.flatnonzero(o > tau)}
    return chosen if chosen else {int(np.argmax(o))}


def predict_names(o: np.ndarray, tau: float, charge_vocab: list[str]) -> set[str]:
    return {charge_vocab[i] for i in predict(o, tau)}


THRESHOLD_GRID = [round(0.05 * i, 2) for i in range(1, 20)]


def tune_threshold(probs: list[np.ndarray], gold_indices: list[set[int]]) -> float:
    """Grid-search tau maximizing micro-F1; ties resolve to the smaller tau."""
    if not probs:
        raise DomainError("tune_threshold needs validation predictions")
    best_tau, best_f1 = THRESHOLD_GRID[0], -1.0
    for tau in THRESHOLD_GRID:
        batch = mx.PredictionBatch([predict(o, tau) for o in probs], gold_indices)
        _, _, f1 = mx.micro_prf(batch)
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau


def _case_loss(case: CaseRecord, model: ChargeModel, y: np.ndarray,
               topk: list | None) -> tuple[Tensor, float, float]:
    """Total loss tensor plus the two component values for logging."""
    cfg = model.config
    trace = forward(case, model, topk=topk)
    t = None
    if cfg.variant == Variant.FACT_SUPV_ART and cfg.beta > 0:
        t = attention_target(trace.topk, case.gold_articles, cfg.k)
    charge_term = nd.cross_entropy(y, trace.o_tensor)
    if t is None or cfg.beta == 0.0 or trace.alpha_tensor is None:
        attn_value = 0.0
        total = charge_term
    else:
        attn_term = nd.cross_entropy(t, trace.alpha_tensor)
        attn_value = attn_term.item()
        total = charge_term + cfg.beta * attn_term
    return total, charge_term.item(), attn_value


def _evaluate(model: ChargeModel, cases: list[CaseRecord], topks: list,
              tau: float) -> tuple[float, list[np.ndarray]]:
    probs = []
    predicted = []
    gold = []
    for case, topk in zip(cases, topks):
        trace = forward(case, model, topk=topk)
        probs.append(trace.o)
        predicted.append(predict_names(trace.o, tau, model.charge_vocab))
        gold.append(case.gold_charges)
    _, _, f1 = mx.micro_prf(mx.PredictionBatch(predicted, gold))
    return f1, probs


def _precompute_topk(cases: list[CaseRecord], cfg: ModelConfig,
                     bank: ExtractorBank | None) -> list:
    """Fixed article slots per case; the extractor is deterministic, so this
    is a pure cache."""
    if not cfg.uses_articles():
        return [None] * len(cases)
    if cfg.variant == Variant.FACT_GOLD_ART:
        return [sorted(c.gold_articles, key=article_sort_key)[:cfg.k] for c in cases]
    if bank is None:
        raise StateError(f"variant {cfg.variant.value} needs a trained extractor bank")
    if cfg.k > len(bank.scorers):
        raise DomainError(f"k={cfg.k} exceeds the bank's {len(bank.scorers)} scorers")
    return [[aid for aid, _ in extract_top_k(c.tokens(), bank, k=cfg.k)] for c in cases]


def train(train_set: list[CaseRecord], valid_set: list[CaseRecord],
          config: ModelConfig, seed: int, bank: ExtractorBank | None = None,
          article_db: dict | None = None, word_emb_path=None,
          init: ChargeModel | None = None, start_epoch: int = 0,
          ) -> tuple[ChargeModel, list[dict]]:
    """Mini-batch SGD with per-epoch seeded shuffles and early stopping on
    validation micro-F1; returns the best-validation model with tuned tau.

    Per-epoch shuffles are seeded by (seed, epoch), so resuming from epoch N
    replays the exact trajectory a straight run would have taken.
    """
    if not train_set:
        raise DomainError("empty training set")
    if not valid_set:
        raise DomainError("empty validation set")

    if init is None:
        word_vocab, pos_vocab = build_vocab(train_set)
        charge_vocab = sorted({c for case in train_set for c in case.gold_charges})
        rng = np.random.default_rng(seed)
        params = ModelParams.create(config, len(word_vocab), len(pos_vocab),
                                    len(charge_vocab), rng)
        if word_emb_path is not None:
            n = apply_pretrained_embeddings(params, word_vocab, word_emb_path)
            log.info("loaded %d pretrained embedding rows", n)
        article_docs = {}
        if config.uses_articles():
            if article_db is None:
                raise StateError("article variants need an article database")
            article_docs = tokenize_article_db(article_db, word_vocab, pos_vocab)
        model = ChargeModel(config, params, word_vocab, pos_vocab, charge_vocab,
                            article_docs, tau=config.tau)
    else:
        model = init
        config = model.config

    train_topk = _precompute_topk(train_set, config, bank)
    valid_topk = _precompute_topk(valid_set, config, bank)
    targets = [charge_target(c.gold_charges, model.charge_vocab) for c in train_set]

    params = model.params.tensors()
    sgd = SgdConfig(learning_rate=config.lr, batch_size=config.batch)
    best_f1 = -1.0
    best_state: list[np.ndarray] | None = None
    best_epoch = -1
    stale = 0
    history: list[dict] = []

    for epoch in range(start_epoch, config.max_epochs):
        order = np.random.default_rng((seed, epoch)).permutation(len(train_set))
        epoch_loss = epoch_charge = epoch_attn = 0.0
        for lo in range(0, len(order), config.batch):
            idx = order[lo:lo + config.batch]
            with Tape() as tape:
                total = None
                for i in idx:
                    loss_i, charge_v, attn_v = _case_loss(
                        train_set[i], model, targets[i], train_topk[i])
                    epoch_charge += charge_v
                    epoch_attn += attn_v
                    total = loss_i if total is None else total + loss_i
                batch_loss = total * (1.0 / len(idx))
                tape.backward(batch_loss, params)
            epoch_loss += batch_loss.item() * len(idx)
            nd.sgd_step(params, sgd)

        valid_f1, _ = _evaluate(model, valid_set, valid_topk, config.tau)
        n = len(train_set)
        entry = {"epoch": epoch, "train_loss": epoch_loss / n,
                 "charge_loss": epoch_charge / n, "attention_loss": epoch_attn / n,
                 "valid_micro_f1": valid_f1}
        history.append(entry)
        log.info("epoch %d: loss %.4f (charge %.4f, attention %.4f) valid micro-F1 %.4f",
                 epoch, entry["train_loss"], entry["charge_loss"],
                 entry["attention_loss"], valid_f1)

        if valid_f1 > best_f1:
            best_f1 = valid_f1
            best_state = [t.data.copy() for t in params]
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (best %.4f at epoch %d)",
                         epoch, best_f1, best_epoch)
                break

    if best_state is not None:
        for t, data in zip(params, best_state):
            t.data = data
    model.epochs_completed = history[-1]["epoch"] + 1 if history else start_epoch

    _, probs = _evaluate(model, valid_set, valid_topk, config.tau)
    index = model.charge_index()
    gold_idx = [{index[c] for c in case.gold_charges if c in index} or {-1}
                for case in valid_set]
    model.tau = tune_threshold(probs, gold_idx)
    return model, history


META_SUFFIX = ".meta.json"


def save_model(path, model: ChargeModel) -> None:
    """Binary checkpoint plus a JSON sidecar with config, vocabularies, and tau."""
    nd.save_checkpoint(path, model.params.named())
    word_in_order = [None] * len(model.word_vocab)
    for tok, i in model.word_vocab.items():
        word_in_order[i] = tok
    pos_in_order = [None] * len(model.pos_vocab)
    for tok, i in model.pos_vocab.items():
        pos_in_order[i] = tok
    meta = {
        "config": model.config.to_dict(),
        "charge_vocab": model.charge_vocab,
        "article_ids": [list(a) if isinstance(a, tuple) else a
                        for a in sorted(model.article_docs, key=article_sort_key)],
        "word_vocab": word_in_order,
        "pos_vocab": pos_in_order,
        "tau": model.tau,
        "epochs_completed": model.epochs_completed,
    }
    with open(str(path) + META_SUFFIX, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, ensure_ascii=False)


def load_model(path, article_db: dict | None = None) -> ChargeModel:
    with open(str(path) + META_SUFFIX, encoding="utf-8") as fh:
        meta = json.load(fh)
    config = ModelConfig(**meta["config"])
    word_vocab = {tok: i for i, tok in enumerate(meta["word_vocab"])}
    pos_vocab = {tok: i for i, tok in enumerate(meta["pos_vocab"])}
    params = ModelParams.create(config, len(word_vocab), len(pos_vocab),
                                len(meta["charge_vocab"]), np.random.default_rng(0))
    arrays = nd.load_checkpoint(path)
    named = dict(params.named())
    if set(arrays) != set(named):
        missing = set(named) ^ set(arrays)
        raise StateError(f"checkpoint does not match the configured model: {sorted(missing)}")
    for name, arr in arrays.items():
        if named[name].shape != arr.shape:
            raise StateError(f"parameter {name} has shape {arr.shape}, "
                             f"expected {named[name].shape}")
        named[name].data = arr.copy()
    article_docs = {}
    if config.uses_articles():
        if article_db is None:
            raise StateError("article variants need an article database to load")
        article_docs = tokenize_article_db(article_db, word_vocab, pos_vocab)
        want = {tuple(a) if isinstance(a, list) else a for a in meta["article_ids"]}
        have = set(article_docs)
        if not want <= have:
            raise StateError(f"article database is missing ids {sorted(want - have)}")
    return ChargeModel(config, params, word_vocab, pos_vocab, meta["charge_vocab"],
                       article_docs, tau=meta["tau"],
                       epochs_completed=meta.get("epochs_completed", 0))


def clone_model(model: ChargeModel) -> ChargeModel:
    """Deep copy for experiments that mutate parameters."""
    out = copy.deepcopy(model)
    return out


def prediction_record(trace: ForwardTrace, model: ChargeModel,
                      tau: float | None = None) -> dict:
    """Machine-readable prediction: charges with probabilities and the
    attention-ranked articles shown as legal basis."""
    tau = model.tau if tau is None else tau
    chosen = sorted(predict(trace.o, tau))
    record = {
        "charges": [model.charge_vocab[i] for i in chosen],
        "probabilities": {model.charge_vocab[i]: float(trace.o[i])
                          for i in range(len(model.charge_vocab))},
        "tau": tau,
    }
    if trace.topk is not None and trace.alpha is not None:
        ranked = sorted(zip(trace.topk, trace.alpha), key=lambda p: -p[1])
        record["articles"] = [
            {"id": list(aid) if isinstance(aid, tuple) else aid, "attention": float(w)}
            for aid, w in ranked
        ]
    return record
