//! BM25 and fusion against values produced independently by
//! scripts/oracles/retrieval.py and by the closed forms written out here.

use std::path::PathBuf;

use proptest::prelude::*;
use redefix_core::kb::{KbDocument, KbMetadata, KbStore};
use redefix_core::layout::RlfType;
use redefix_core::retriever::{
    fuse, retrieve_context, tokenize, Bm25Index, Bm25Params, EnsembleWeights, HashingEmbedder, HybridIndex,
    RetrieverConfig,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Toy {
    query: String,
    documents: Vec<ToyDoc>,
}

#[derive(Deserialize)]
struct ToyDoc {
    id: u64,
    text: String,
}

fn toy(name: &str) -> Toy {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/retrieval").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn docs(t: &Toy) -> Vec<(u64, String)> {
    t.documents.iter().map(|d| (d.id, d.text.clone())).collect()
}

#[test]
fn bm25_matches_reference() {
    let t = toy("bm25-toy.json");
    let tokens: Vec<(u64, Vec<String>)> = t.documents.iter().map(|d| (d.id, tokenize(&d.text))).collect();
    let idx = Bm25Index::build(&tokens, Bm25Params::default());
    let q = tokenize(&t.query);

    // lengths 12, 9, 9 (avg 10); "width" in docs 1 (tf 2) and 2 (tf 1)
    let idf = 1.6f64.ln();
    let closed = [
        (1, idf * 2.0 * 2.2 / (2.0 + 1.2 * (0.25 + 0.75 * 1.2))),
        (2, idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 0.9))),
        (3, 0.0),
    ];
    let frozen = [(1, 0.6118390439885316), (2, 0.49005117741261534), (3, 0.0)];
    for ((id, c), (_, f)) in closed.iter().zip(frozen) {
        let s = idx.score(&q, *id).unwrap();
        assert!((s - c).abs() < 1e-9, "doc {id}: {s} vs closed form {c}");
        assert!((s - f).abs() < 1e-9, "doc {id}: {s} vs reference {f}");
    }
}

#[test]
fn fusion_matches_reference() {
    let t = toy("rrf-toy.json");
    let e = HashingEmbedder::default();
    let idx = HybridIndex::build(&docs(&t), &e, Bm25Params::default()).unwrap();
    assert_eq!(idx.bm25_ranking(&t.query), vec![2, 1, 3]);
    assert_eq!(idx.dense_ranking(&t.query).unwrap(), vec![3, 1, 2, 4]);

    let out = idx.ensemble_rank(&t.query, EnsembleWeights::default(), 10).unwrap();
    let expected = [
        (2, 0.8 / 61.0 + 0.2 / 63.0, 0.01628935727296383),
        (1, 0.8 / 62.0 + 0.2 / 62.0, 0.016129032258064516),
        (3, 0.8 / 63.0 + 0.2 / 61.0, 0.015977101223002863),
        (4, 0.2 / 64.0, 0.003125),
    ];
    assert_eq!(out.len(), expected.len());
    for (r, (id, closed, frozen)) in out.iter().zip(expected) {
        assert_eq!(r.doc_id, id);
        assert!((r.fused_score - closed).abs() < 1e-12);
        assert!((r.fused_score - frozen).abs() < 1e-12);
    }
    assert_eq!(out[3].bm25_rank, None);
    assert_eq!(out[3].dense_rank, Some(4));
}

#[test]
fn unrelated_document_keeps_order() {
    let t = toy("rrf-toy.json");
    let e = HashingEmbedder::default();
    let before = HybridIndex::build(&docs(&t), &e, Bm25Params::default()).unwrap().bm25_ranking(&t.query);
    let mut more = docs(&t);
    more.push((9, "flex grow shrink basis order".into()));
    let after = HybridIndex::build(&more, &e, Bm25Params::default()).unwrap().bm25_ranking(&t.query);
    assert_eq!(before, after);
}

#[test]
fn deterministic_output() {
    let t = toy("rrf-toy.json");
    let e = HashingEmbedder::default();
    let run = || {
        let idx = HybridIndex::build(&docs(&t), &e, Bm25Params::default()).unwrap();
        serde_json::to_string(&idx.ensemble_rank(&t.query, EnsembleWeights::default(), 5).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

fn doc(id: u64, text: &str) -> KbDocument {
    KbDocument {
        rlf_type: RlfType::ElementProtrusion,
        metadata: KbMetadata {
            id,
            link: format!("https://stackoverflow.com/q/{id}"),
            title: format!("question {id}"),
            body: String::new(),
        },
        cleaned_question: text.into(),
        answers: vec!["see above".into()],
        comments: vec![],
    }
}

fn store_with(docs: &[KbDocument]) -> (tempfile::TempDir, KbStore) {
    let dir = tempfile::tempdir().unwrap();
    let lines: String = docs.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect();
    std::fs::write(dir.path().join("element_protrusion.jsonl"), lines).unwrap();
    std::fs::write(dir.path().join("stats.json"), "{}").unwrap();
    let store = KbStore::open(dir.path()).unwrap();
    (dir, store)
}

#[test]
fn retrieve_context_returns_documents_in_fused_order() {
    let t = toy("rrf-toy.json");
    let kb: Vec<KbDocument> = t.documents.iter().map(|d| doc(d.id, &d.text)).collect();
    let (_dir, store) = store_with(&kb);
    let props = vec!["width".to_string(), "box-sizing".to_string()];
    let got = retrieve_context(&props, RlfType::ElementProtrusion, &store, &HashingEmbedder::default(), &RetrieverConfig::default())
        .unwrap();
    let ids: Vec<u64> = got.iter().map(|d| d.metadata.id).collect();
    let e = HashingEmbedder::default();
    let index = HybridIndex::from_documents(&kb, &e, Bm25Params::default()).unwrap();
    let expected: Vec<u64> = index
        .ensemble_rank("width box-sizing", EnsembleWeights::default(), 5)
        .unwrap()
        .iter()
        .map(|r| r.doc_id)
        .collect();
    assert_eq!(ids, expected);
    assert!(retrieve_context(&[], RlfType::ElementProtrusion, &store, &e, &RetrieverConfig::default()).is_err());
}

#[test]
fn single_matching_document_first() {
    let (_dir, store) = store_with(&[doc(5, "margin only"), doc(6, "the width is wrong"), doc(7, "float stuff")]);
    let got = retrieve_context(
        &["width".to_string()],
        RlfType::ElementProtrusion,
        &store,
        &HashingEmbedder::default(),
        &RetrieverConfig::default(),
    )
    .unwrap();
    assert_eq!(got[0].metadata.id, 6);
}

proptest! {
    // Moving a document up in either ranking never lowers its fused score.
    #[test]
    fn fusion_is_monotone(
        bm in Just((1u64..=8).collect::<Vec<_>>()).prop_shuffle(),
        dense in Just((1u64..=8).collect::<Vec<_>>()).prop_shuffle(),
        pick in 1u64..=8,
        bw in 0.0f64..1.0,
        dw in 0.0f64..1.0,
    ) {
        let w = EnsembleWeights { bm25_weight: bw + 0.01, dense_weight: dw };
        let score = |b: &[u64], d: &[u64]| fuse(b, d, w, 100).into_iter().find(|r| r.doc_id == pick).map_or(0.0, |r| r.fused_score);
        let base = score(&bm, &dense);
        let pos = bm.iter().position(|x| *x == pick).unwrap();
        if pos > 0 {
            let mut up = bm.clone();
            up.swap(pos, pos - 1);
            prop_assert!(score(&up, &dense) >= base);
        }
        let pos = dense.iter().position(|x| *x == pick).unwrap();
        if pos > 0 {
            let mut up = dense.clone();
            up.swap(pos, pos - 1);
            prop_assert!(score(&bm, &up) >= base);
        }
    }
}
