"""Topic modeling of CVE descriptions: TF-IDF plus non-negative factorization.

The document-term matrix uses raw token counts weighted by smoothed
inverse document frequency and L2-normalized rows.  Factorization is the
classic multiplicative-update scheme for the Frobenius objective, which
keeps both factors non-negative and never increases the objective.

Documents with no in-vocabulary tokens belong to a reserved extra topic
whose id equals the topic count.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .features import tokenize

_EPS = 1e-10


@dataclass
class TopicModel:
    vocabulary: list[str]
    topic_term: np.ndarray  # k x |vocabulary|, non-negative
    k: int
    idf: np.ndarray  # per-token weights, |vocabulary|
    objective: list[float] = field(default_factory=list)

    @property
    def empty_topic_id(self) -> int:
        return self.k

    def to_dict(self) -> dict:
        return {
            "vocabulary": self.vocabulary,
            "topic_term": self.topic_term.tolist(),
            "k": self.k,
            "idf": self.idf.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TopicModel":
        return cls(
            vocabulary=list(payload["vocabulary"]),
            topic_term=np.asarray(payload["topic_term"], dtype=np.float64),
            k=int(payload["k"]),
            idf=np.asarray(payload["idf"], dtype=np.float64),
        )


def _build_vocabulary(corpus: list[list[str]]) -> tuple[list[str], np.ndarray]:
    df: Counter[str] = Counter()
    for tokens in corpus:
        df.update(set(tokens))
    vocabulary = sorted(df)
    n_docs = max(1, sum(1 for t in corpus if t))
    idf = np.array(
        [np.log((1.0 + n_docs) / (1.0 + df[t])) + 1.0 for t in vocabulary],
        dtype=np.float64,
    )
    return vocabulary, idf


def _tfidf_row(tokens: list[str], index: dict[str, int], idf: np.ndarray) -> np.ndarray:
    row = np.zeros(len(index), dtype=np.float64)
    for token, count in Counter(tokens).items():
        j = index.get(token)
        if j is not None:
            row[j] = count * idf[j]
    norm = np.linalg.norm(row)
    if norm > 0:
        row /= norm
    return row


def tfidf_matrix(
    corpus: list[list[str]], vocabulary: list[str], idf: np.ndarray
) -> np.ndarray:
    index = {t: j for j, t in enumerate(vocabulary)}
    return np.vstack([_tfidf_row(tokens, index, idf) for tokens in corpus])


def fit_nmf(
    corpus: list[list[str]],
    k: int,
    seed: int,
    max_iter: int = 200,
    tol: float = 1e-4,
) -> TopicModel:
    """Factor the corpus TF-IDF matrix into k topics.

    Runs multiplicative updates until the relative objective change drops
    below ``tol`` or ``max_iter`` iterations; the per-iteration Frobenius
    objective is kept on the returned model for inspection.
    """
    if k <= 0 or k > len(corpus):
        raise ParameterError(f"topic count {k} out of range for {len(corpus)} documents")
    non_empty = [tokens for tokens in corpus if tokens]
    if len(non_empty) < k:
        raise ParameterError(
            f"need at least {k} non-empty documents, got {len(non_empty)}"
        )
    vocabulary, idf = _build_vocabulary(non_empty)
    V = tfidf_matrix(non_empty, vocabulary, idf)
    n, m = V.shape

    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(V.mean(), _EPS) / k)
    W = np.abs(scale * rng.standard_normal((n, k))) + _EPS
    H = np.abs(scale * rng.standard_normal((k, m))) + _EPS

    objective: list[float] = [float(np.linalg.norm(V - W @ H))]
    for _ in range(max_iter):
        H *= (W.T @ V) / (W.T @ W @ H + _EPS)
        W *= (V @ H.T) / (W @ (H @ H.T) + _EPS)
        current = float(np.linalg.norm(V - W @ H))
        objective.append(current)
        previous = objective[-2]
        if previous > 0 and abs(previous - current) / previous < tol:
            break

    # a topic row that died during the updates would break argmax ties
    for row in range(k):
        if not H[row].any():
            H[row] = _EPS

    return TopicModel(
        vocabulary=vocabulary, topic_term=H, k=k, idf=idf, objective=objective
    )


def assign_topic(description: str, model: TopicModel) -> tuple[int, np.ndarray]:
    """Project a document onto the topic basis; return (topic id, correlations).

    The correlation vector is the non-negative projection of the document
    TF-IDF vector onto the topic-term matrix: 50 multiplicative updates
    from a uniform start.  Documents with no in-vocabulary tokens map to
    the reserved empty topic with a zero vector.
    """
    index = {t: j for j, t in enumerate(model.vocabulary)}
    v = _tfidf_row(tokenize(description), index, model.idf)
    if not v.any():
        return model.empty_topic_id, np.zeros(model.k, dtype=np.float64)
    H = model.topic_term
    gram = H @ H.T
    h = np.full(model.k, 1.0 / model.k, dtype=np.float64)
    target = H @ v
    for _ in range(50):
        h *= target / (gram @ h + _EPS)
    return int(np.argmax(h)), h


def top_keywords(model: TopicModel, n: int) -> list[list[tuple[str, float]]]:
    """Per topic, the n heaviest (token, weight) pairs, ties alphabetical."""
    if n < 1:
        raise ParameterError("keyword count must be >= 1")
    result = []
    for row in model.topic_term:
        ranked = sorted(
            zip(model.vocabulary, row), key=lambda tw: (-tw[1], tw[0])
        )
        result.append([(t, float(w)) for t, w in ranked[:n]])
    return result


def export_keyword_csv(model: TopicModel, n: int, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "rank", "token", "weight"])
        for topic_id, keywords in enumerate(top_keywords(model, n)):
            for rank, (token, weight) in enumerate(keywords, start=1):
                writer.writerow([topic_id, rank, token, f"{weight:.12g}"])
