"""Reference values for the retrieval toy corpora, computed without the Rust
code: regex tokenizer, textbook BM25, FNV-1a signed hashing, weighted RRF."""
import json, math, re, sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2] / "fixtures" / "retrieval"

def tok(s):
    return [t for t in re.split(r"[^0-9A-Za-z\-]+", s.lower()) if t]

def bm25(docs, query, k1=1.2, b=0.75):
    toks = {d["id"]: tok(d["text"]) for d in docs}
    n = len(docs)
    avg = sum(len(t) for t in toks.values()) / n
    out = {}
    for i, t in toks.items():
        s = 0.0
        for q in tok(query):
            df = sum(1 for u in toks.values() if q in u)
            tf = t.count(q)
            if tf == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(t) / avg))
        out[i] = s
    return out

def fnv(s):
    h = 0xcbf29ce484222325
    for c in s.encode():
        h = ((h ^ c) * 0x100000001b3) % 2**64
    return h

def embed(s, dim=256):
    v = [0.0] * dim
    for t in tok(s):
        h = fnv(t)
        v[h % dim] += -1.0 if h >> 63 else 1.0
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v] if n else v

def ranking(scores):
    return [i for i, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]

def main():
    toy = json.loads((ROOT / "bm25-toy.json").read_text())
    print("bm25", {k: repr(v) for k, v in bm25(toy["documents"], toy["query"]).items()})

    rrf = json.loads((ROOT / "rrf-toy.json").read_text())
    docs, q = rrf["documents"], rrf["query"]
    lex = ranking({i: s for i, s in bm25(docs, q).items() if s > 0})
    qv = embed(q)
    dense = ranking({d["id"]: sum(a * b for a, b in zip(qv, embed(d["text"]))) for d in docs})
    fused = {}
    for w, r in ((0.8, lex), (0.2, dense)):
        for pos, i in enumerate(r, 1):
            fused[i] = fused.get(i, 0.0) + w / (60 + pos)
    print("lexical", lex, "dense", dense)
    print("fused", [(i, repr(fused[i])) for i in ranking(fused)])

if __name__ == "__main__":
    sys.exit(main())
