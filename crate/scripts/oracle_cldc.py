#!/usr/bin/env python3
"""Independent minimal check of the synthetic cross-lingual classification setup.

Implements the bilingual squared-distance energy and the margin hinge objective
directly with numpy (ADD composition, sparse AdaGrad, touched-row L2), trains on
a twin-language synthetic corpus drawn from the same generative design as the
Rust generator, then trains an averaged perceptron on language-A documents and
tests on language-B documents.

Usage: python3 scripts/oracle_cldc.py [--seed N] [--lam L] [--dim D] [--pivot | --toy]
"""
import argparse
import time

import numpy as np

VOCAB, TOPICS, BLOCK = 200, 4, 40
TOPIC_PROB = 0.75


def latent_sentence(rng, topic):
    n = rng.integers(4, 11)
    out = []
    for _ in range(n):
        if rng.random() < TOPIC_PROB:
            out.append(topic * BLOCK + rng.integers(BLOCK))
        else:
            out.append(TOPICS * BLOCK + rng.integers(VOCAB - TOPICS * BLOCK))
    return out


def latent_corpus(rng, n):
    return [latent_sentence(rng, i % TOPICS) for i in range(n)]


def latent_docs(rng, n):
    docs = []
    for i in range(n):
        t = i % TOPICS
        docs.append((t, [latent_sentence(rng, t) for _ in range(rng.integers(3, 7))]))
    return docs


def train(corpora, langs, d, k, m, step, lam, batch, epochs, rng, eps=1e-6):
    """corpora: list of (src_lang, tgt_lang, list of latent sentences)."""
    perms = {l: rng.permutation(VOCAB) for l in langs}
    E = {l: rng.normal(0.0, np.sqrt(0.1), size=(VOCAB, d)) for l in langs}
    G = {l: np.zeros((VOCAB, d)) for l in langs}
    losses = []
    for ep in range(epochs):
        total = 0.0
        batches = []
        for (sl, tl, sents) in corpora:
            order = rng.permutation(len(sents))
            batches.append([(sl, tl, sents, order[i:i + batch]) for i in range(0, len(sents), batch)])
        inter = [b for group in zip(*batches) for b in group]
        for (sl, tl, sents, idx) in inter:
            grads = {}

            def acc(lang, ids, g):
                for w in ids:
                    key = (lang, w)
                    grads[key] = grads.get(key, 0.0) + g

            for p in idx:
                a = [perms[sl][w] for w in sents[p]]
                b = [perms[tl][w] for w in sents[p]]
                fa = E[sl][a].sum(0)
                gb = E[tl][b].sum(0)
                epos = np.sum((fa - gb) ** 2)
                for _ in range(k):
                    q = p
                    while q == p:
                        q = rng.integers(len(sents))
                    nn = [perms[tl][w] for w in sents[q]]
                    gn = E[tl][nn].sum(0)
                    eneg = np.sum((fa - gn) ** 2)
                    h = m + epos - eneg
                    if h > 0:
                        total += h
                        acc(sl, a, 2 * (fa - gb) - 2 * (fa - gn))
                        acc(tl, b, -2 * (fa - gb))
                        acc(tl, nn, 2 * (fa - gn))
            for (lang, w), g in grads.items():
                g = g + lam * E[lang][w]
                G[lang][w] += g * g
                E[lang][w] -= step * g / np.sqrt(G[lang][w] + eps)
        losses.append(total)
    return E, perms, losses


def doc_vec(E, perm, sents):
    return np.mean([E[perm[s]].sum(0) for s in sents], axis=0)


def perceptron(X, y, classes, epochs, rng):
    X = np.hstack([X, np.ones((len(X), 1))])
    W = np.zeros((classes, X.shape[1]))
    S = np.zeros_like(W)
    c = 0
    for _ in range(epochs):
        for i in rng.permutation(len(X)):
            pred = int(np.argmax(W @ X[i]))
            if pred != y[i]:
                W[y[i]] += X[i]
                W[pred] -= X[i]
            S += W
            c += 1
    return S / c


def accuracy(W, X, y):
    X = np.hstack([X, np.ones((len(X), 1))])
    return float(np.mean(np.argmax(X @ W.T, axis=1) == y))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--pivot", action="store_true")
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--toy", action="store_true", help="50 pairs, d=8, k=5, 50 epochs, full-corpus batches")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    t0 = time.time()
    if args.toy:
        sents = latent_corpus(rng, 50)
        _, _, losses = train([("a", "b", sents)], ["a", "b"], 8, 5, 8.0, 0.05, args.lam, 50, 50, rng)
        print(f"loss first={losses[0]:.1f} last={losses[-1]:.1f} ratio={losses[-1] / losses[0]:.4f}")
        return
    d, k, m, step, batch = args.dim, 10, float(args.dim), 0.05, 10
    if not args.pivot:
        sents = latent_corpus(rng, 500)
        E, perms, losses = train([("a", "b", sents)], ["a", "b"], d, k, m, step, args.lam, batch, args.epochs, rng)
        train_docs, test_docs = latent_docs(rng, 200), latent_docs(rng, 200)
        Xa = np.array([doc_vec(E["a"], perms["a"], s) for _, s in train_docs])
        ya = np.array([t for t, _ in train_docs])
        Xb = np.array([doc_vec(E["b"], perms["b"], s) for _, s in test_docs])
        yb = np.array([t for t, _ in test_docs])
        W = perceptron(Xa, ya, TOPICS, 10, rng)
        print(f"loss first={losses[0]:.1f} last={losses[-1]:.1f}")
        print(f"train acc (a)={accuracy(W, Xa, ya):.3f} cross acc (b)={accuracy(W, Xb, yb):.3f} majority=0.25")
    else:
        s1, s2 = latent_corpus(rng, 500), latent_corpus(rng, 500)
        E, perms, losses = train([("en", "de", s1), ("en", "fr", s2)], ["en", "de", "fr"], d, k, m, step, args.lam, batch, args.epochs, rng)

        def cos(u, v):
            return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-300))

        trans = [cos(E["de"][perms["de"][w]], E["fr"][perms["fr"][w]]) for w in range(VOCAB)]
        rand = [cos(E["de"][perms["de"][i]], E["fr"][perms["fr"][j]]) for i in range(VOCAB) for j in range(VOCAB) if i != j]
        mt, mr, sr = np.mean(trans), np.mean(rand), np.std(rand, ddof=1)
        print(f"trans mean={mt:.3f} random mean={mr:.3f} sd={sr:.3f} z={(mt - mr) / sr:.2f}")
        tr, te = latent_docs(rng, 200), latent_docs(rng, 200)
        Xa = np.array([doc_vec(E["de"], perms["de"], s) for _, s in tr])
        ya = np.array([t for t, _ in tr])
        Xb = np.array([doc_vec(E["fr"], perms["fr"], s) for _, s in te])
        yb = np.array([t for t, _ in te])
        W = perceptron(Xa, ya, TOPICS, 10, rng)
        print(f"de->fr acc={accuracy(W, Xb, yb):.3f} majority=0.25")
    print(f"elapsed {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
