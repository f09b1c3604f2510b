"""Synthetic dataset generators for training and ablation tests.

Two families:

* separable: each label owns a few signature tokens; documents are unions
  of their labels' signatures plus noise. Cleanly learnable, used for
  overfit and smoke tests.

* planted correlation: labels live in topic blocks with a few popular
  anchors and a long tail of rare labels (most with < 5 positives). Rare
  labels co-occur with their block's anchors but their own text is a
  single token that barely appears in documents, so label-text alone is
  weak evidence and the correlation structure carries the signal.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from graphxc.data import XcDataset, fit_idf, apply_tfidf


def _csr(rows, n_cols, dtype=np.float32):
    data, ri, ci = [], [], []
    for i, row in enumerate(rows):
        for c, v in sorted(row.items()):
            ri.append(i)
            ci.append(c)
            data.append(v)
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n_cols), dtype=dtype)


def separable_dataset(
    seed: int,
    n_docs: int = 500,
    n_labels: int = 100,
    vocab: int = 200,
    tokens_per_label: int = 2,
    group_size: int = 2,
    noise_tokens: int = 1,
    tfidf: bool = True,
):
    """Documents are noisy unions of their labels' token signatures.

    Labels co-occur in fixed groups (consecutive ids), so the correlation
    structure is consistent: a document's labels are a group or a subset of
    one. That keeps the problem cleanly overfittable end to end.
    """
    rng = np.random.default_rng(seed)
    sig_pool = vocab - noise_tokens * 4
    label_tokens = [
        (np.arange(tokens_per_label) + (l * tokens_per_label)) % sig_pool
        for l in range(n_labels)
    ]
    n_groups = n_labels // group_size
    doc_rows, label_rows = [], []
    for _ in range(n_docs):
        grp = int(rng.integers(0, n_groups))
        members = np.arange(grp * group_size, (grp + 1) * group_size)
        take = int(rng.integers(1, group_size + 1))
        labs = rng.choice(members, size=take, replace=False)
        toks: dict[int, float] = {}
        for l in labs:
            for t in label_tokens[l]:
                toks[int(t)] = toks.get(int(t), 0.0) + 1.0
        for t in rng.choice(np.arange(sig_pool, vocab), size=noise_tokens):
            toks[int(t)] = toks.get(int(t), 0.0) + 1.0
        doc_rows.append(toks)
        label_rows.append({int(l): 1.0 for l in labs})
    text_rows = [{int(t): 1.0 for t in label_tokens[l]} for l in range(n_labels)]
    docs = _csr(doc_rows, vocab)
    labels = _csr(label_rows, n_labels)
    text = _csr(text_rows, vocab)
    if not tfidf:
        return XcDataset(docs=docs, labels=labels, label_text=text).validate()
    idf = fit_idf(docs)
    return XcDataset(
        docs=apply_tfidf(docs, idf),
        labels=labels,
        label_text=apply_tfidf(text, idf),
    ).validate()


def planted_correlation_dataset(
    seed: int,
    n_docs: int = 2000,
    n_families: int = 64,
    family_size: int = 8,
    n_anchors: int = 2,
    rare_docs_max: int = 4,
    family_sig_tokens: int = 6,
    anchor_text_tokens: int = 3,
    test_attach_rate: float = 0.35,
    n_test: int = 500,
    child_docs: str = "parent",
    tfidf: bool = True,
):
    """Anchor/child structured data with a rare tail; returns (train, test).

    Labels come in families: a couple of popular anchors plus rare children
    tied to one specific parent anchor. A child appears on at most
    ``rare_docs_max`` training documents. Test documents of a parent carry
    its children as positives at ``test_attach_rate`` but give no token
    evidence for them, so ranking children correctly requires the learned
    correlation structure rather than text overlap. Anchors of one family
    share identical label text; only their private document tokens (hence
    the refinement vectors) can tell them apart.

    ``child_docs`` controls where the children's training positives live:

    * "parent": on documents of the parent anchor (which also gain the
      child's token). Children's centroids then carry family signal, and
      the graph's value shows up in ranking-time expansion.
    * "own": on tiny private documents (child token plus noise) co-tagged
      with the parent. Children's centroids are then noise unless smoothed
      through the graph, which is the regime where graph-augmented
      clustering visibly beats plain centroids.
    """
    if child_docs not in ("parent", "own"):
        raise ValueError("child_docs must be 'parent' or 'own'")
    rng = np.random.default_rng(seed)
    n_labels = n_families * family_size
    n_children = family_size - n_anchors

    # vocabulary: family signatures | per-anchor doc tokens | per-child text
    # tokens | noise
    anchor_tok_base = n_families * family_sig_tokens
    child_tok_base = anchor_tok_base + n_families * n_anchors
    noise_base = child_tok_base + n_families * n_children
    vocab = noise_base + 64

    def family_sig(f):
        return np.arange(f * family_sig_tokens, (f + 1) * family_sig_tokens)

    def family_of(label):
        return divmod(label, family_size)

    def anchor_token(label):
        f, off = family_of(label)
        return anchor_tok_base + f * n_anchors + off

    def child_token(label):
        f, off = family_of(label)
        return child_tok_base + f * n_children + (off - n_anchors)

    def parent_of(child):
        f, off = family_of(child)
        # children are split evenly among the family's anchors
        return f * family_size + (off - n_anchors) % n_anchors

    def gen_docs(n):
        doc_rows, label_rows, doc_anchor = [], [], []
        fams = rng.integers(0, n_families, size=n)
        for i in range(n):
            f = int(fams[i])
            base = f * family_size
            main = base + int(rng.integers(0, n_anchors))
            labs = {main}
            if n_anchors > 1 and rng.random() < 0.3:
                labs.add(base + int(rng.integers(0, n_anchors)))
            toks: dict[int, float] = {}
            for t in rng.choice(family_sig(f), size=3, replace=False):
                toks[int(t)] = toks.get(int(t), 0.0) + 1.0
            for l in labs:
                toks[int(anchor_token(l))] = 2.0
            for t in rng.choice(np.arange(noise_base, vocab), size=2):
                toks[int(t)] = toks.get(int(t), 0.0) + 1.0
            doc_rows.append(toks)
            label_rows.append(labs)
            doc_anchor.append(main)
        return doc_rows, label_rows, np.asarray(doc_anchor)

    children = [l for l in range(n_labels) if family_of(l)[1] >= n_anchors]
    child_counts = {c: int(rng.integers(1, rare_docs_max + 1)) for c in children}
    n_anchor_docs = (
        max(n_families, n_docs - sum(child_counts.values()))
        if child_docs == "own"
        else n_docs
    )
    train_docs, train_labels, train_anchor = gen_docs(n_anchor_docs)
    test_docs, test_labels, test_anchor = gen_docs(n_test)

    child_rng = np.random.default_rng(rng.integers(1 << 62))
    for c in children:
        parent = parent_of(c)
        if child_docs == "own":
            for _ in range(child_counts[c]):
                toks = {int(child_token(c)): 1.0}
                for t in child_rng.choice(np.arange(noise_base, vocab), size=2):
                    toks[int(t)] = toks.get(int(t), 0.0) + 1.0
                train_docs.append(toks)
                train_labels.append({int(c), int(parent)})
        else:
            pdocs = np.flatnonzero(train_anchor == parent)
            m = min(child_counts[c], pdocs.size)
            for i in child_rng.choice(pdocs, size=m, replace=False):
                train_labels[int(i)].add(int(c))
                # the child's token appears in its training documents only
                train_docs[int(i)][int(child_token(c))] = 1.0
        tdocs = np.flatnonzero(test_anchor == parent)
        for i in tdocs:
            if child_rng.random() < test_attach_rate:
                test_labels[int(i)].add(int(c))

    text_rows = []
    for l in range(n_labels):
        f, off = family_of(l)
        if off < n_anchors:
            # anchors share the family vocabulary; with fewer text tokens
            # than the signature their texts overlap but do not coincide
            toks = {
                int(t): 1.0
                for t in rng.choice(family_sig(f), size=anchor_text_tokens, replace=False)
            }
        else:
            toks = {int(child_token(l)): 1.0}
        text_rows.append(toks)

    def finish(doc_rows, label_rows, idf):
        docs = _csr(doc_rows, vocab)
        labels = _csr([{l: 1.0 for l in labs} for labs in label_rows], n_labels)
        text = _csr(text_rows, vocab)
        if idf is None:
            return docs, labels, text
        return apply_tfidf(docs, idf), labels, apply_tfidf(text, idf)

    raw_train = _csr(train_docs, vocab)
    idf = fit_idf(raw_train) if tfidf else None
    tr_docs, tr_labels, tr_text = finish(train_docs, train_labels, idf)
    te_docs, te_labels, _ = finish(test_docs, test_labels, idf)
    train = XcDataset(docs=tr_docs, labels=tr_labels, label_text=tr_text).validate()
    test = XcDataset(docs=te_docs, labels=te_labels, label_text=tr_text).validate()
    return train, test
