use proptest::prelude::*;
use redefix_core::harness::Screenshot;
use redefix_core::kb::{KbDocument, KbMetadata};
use redefix_core::layout::{BoundingBox, RlfRecord, RlfType, WidthRange};
use redefix_core::patch::CssPatch;
use redefix_core::prompt::{
    build_prompt, build_retry, rlf_definition, PromptConfig, PromptError, RlfContext, SectionKind, TokenEstimator,
};

fn context(excerpt: &str) -> RlfContext {
    let rlf = RlfRecord {
        rlf_type: RlfType::ElementProtrusion,
        participants: vec!["/html/body/section[1]/div[1]".into(), "/html/body/section[1]".into()],
        failure_range: WidthRange::new(320, 499),
    };
    RlfContext {
        rlf_definition: rlf_definition(rlf.rlf_type).to_string(),
        localized: vec![("section.column > div.card".into(), "width".into())],
        coordinates: vec![(
            "section.column > div.card".into(),
            BoundingBox { x: 8.0, y: 8.0, width: 300.0, height: 40.0 },
        )],
        screenshot_inside: None,
        screenshot_outside: None,
        page_excerpt: excerpt.to_string(),
        rlf,
    }
}

fn doc(id: u64, words: usize) -> KbDocument {
    KbDocument {
        rlf_type: RlfType::ElementProtrusion,
        metadata: KbMetadata {
            id,
            link: format!("https://stackoverflow.com/q/{id}"),
            title: format!("Child overflows parent {id}"),
            body: "<p>x</p>".into(),
        },
        cleaned_question: "overflow ".repeat(words),
        answers: vec!["Use <code>box-sizing: border-box</code>".into()],
        comments: vec!["works".into()],
    }
}

fn cfg() -> PromptConfig {
    PromptConfig::default()
}

#[test]
fn five_sections_in_order() {
    let docs = vec![doc(1, 5), doc(2, 5)];
    let p = build_prompt(&context("<div></div>"), &docs, 100_000, &cfg()).unwrap();
    let kinds: Vec<SectionKind> = p.sections.iter().map(|s| s.kind).collect();
    assert_eq!(kinds, SectionKind::ORDER);
    assert!(p.text().ends_with("Let's think step by step"));
    let ctx = p.section(SectionKind::Context);
    assert!(ctx.contains("Element Protrusion") || ctx.contains("protrusion"), "{ctx}");
    assert!(ctx.contains("320px to 499px"));
    assert!(ctx.contains("1. section.column > div.card : width"));
    assert!(ctx.contains("x=8, y=8, width=300, height=40"));
    let posts = p.section(SectionKind::SoPosts);
    assert!(posts.find("Child overflows parent 1").unwrap() < posts.find("Child overflows parent 2").unwrap());
    assert!(posts.contains("LINK: https://stackoverflow.com/q/2"));
}

#[test]
fn zero_shot_has_empty_posts() {
    let p = build_prompt(&context("<div></div>"), &[], 100_000, &cfg()).unwrap();
    assert_eq!(p.sections.len(), 5);
    assert_eq!(p.section(SectionKind::SoPosts), "");
    assert!(!p.text().contains("Stack Overflow"));
}

#[test]
fn drops_lowest_ranked_posts_first() {
    let docs: Vec<KbDocument> = (1..=5).map(|i| doc(i, 200)).collect();
    let full = build_prompt(&context("<div></div>"), &docs, usize::MAX, &cfg()).unwrap();
    let three = build_prompt(&context("<div></div>"), &docs[..3], usize::MAX, &cfg()).unwrap();
    let p = build_prompt(&context("<div></div>"), &docs, three.token_estimate, &cfg()).unwrap();
    assert!(full.token_estimate > three.token_estimate);
    assert_eq!(p.text(), three.text());
    let posts = p.section(SectionKind::SoPosts);
    assert!(posts.contains("parent 3") && !posts.contains("parent 4") && !posts.contains("parent 5"));
}

#[test]
fn excerpt_truncated_after_posts_gone() {
    let excerpt = "<div class=\"card\"></div>\n".repeat(200);
    let zero = build_prompt(&context(""), &[], usize::MAX, &cfg()).unwrap();
    let budget = zero.token_estimate + 100;
    let p = build_prompt(&context(&excerpt), &[doc(1, 50)], budget, &cfg()).unwrap();
    assert!(p.token_estimate <= budget);
    assert_eq!(p.section(SectionKind::SoPosts), "");
    assert!(p.section(SectionKind::Context).contains("[truncated]"));
}

#[test]
fn budget_exceeded_when_nothing_fits() {
    let err = build_prompt(&context(""), &[], 10, &cfg()).unwrap_err();
    assert!(matches!(err, PromptError::BudgetExceeded { budget: 10, .. }));
}

#[test]
fn images_count_toward_budget() {
    let mut ctx = context("");
    let shot = Screenshot {
        png_bytes: vec![0; 10],
        viewport_width: 320,
        region: BoundingBox { x: 0.0, y: 0.0, width: 10.0, height: 10.0 },
    };
    let plain = build_prompt(&ctx, &[], usize::MAX, &cfg()).unwrap();
    ctx.screenshot_inside = Some(shot.clone());
    ctx.screenshot_outside = Some(shot);
    let with = build_prompt(&ctx, &[], usize::MAX, &cfg()).unwrap();
    assert_eq!(with.token_estimate, plain.token_estimate + 3200);
    assert_eq!(with.images.len(), 2);
}

#[test]
fn retry_is_exact_continuation() {
    let first = build_prompt(&context("<div></div>"), &[doc(1, 3)], 100_000, &cfg()).unwrap();
    let failed = CssPatch::parse(".card{width:100%}").unwrap();
    let retry = build_retry(&first, &failed, 100_000, &cfg()).unwrap();
    let expected_tail = "The fixed version is still not correct-.card {\n  width: 100%;\n}. Please fix it again. Let's think step by step.";
    assert_eq!(retry.text(), format!("{}\n\n{expected_tail}", first.text()));
    assert_eq!(retry.sections, first.sections);
    let again = build_retry(&retry, &failed, 100_000, &cfg()).unwrap();
    assert!(again.text().starts_with(&retry.text()));
    assert_eq!(again.followups.len(), 2);
}

#[test]
fn retry_over_budget() {
    let first = build_prompt(&context(""), &[], 100_000, &cfg()).unwrap();
    let failed = CssPatch::parse(".card{width:100%}").unwrap();
    assert!(matches!(
        build_retry(&first, &failed, first.token_estimate, &cfg()),
        Err(PromptError::BudgetExceeded { .. })
    ));
}

proptest! {
    #[test]
    fn estimate_is_ceiling_of_quarter(len in 0usize..2000, images in 0usize..4) {
        let text = "a".repeat(len);
        let e = TokenEstimator::default();
        prop_assert_eq!(e.estimate(&text, images), (len + 3) / 4 + 1600 * images);
    }

    #[test]
    fn fewer_posts_is_a_prefix_property(k in 0usize..=5) {
        // dropping posts never reorders the ones that remain
        let docs: Vec<KbDocument> = (1..=5).map(|i| doc(i, 10)).collect();
        let p = build_prompt(&context(""), &docs[..k], usize::MAX, &cfg()).unwrap();
        let posts = p.section(SectionKind::SoPosts);
        let mut last = 0;
        for i in 1..=k as u64 {
            let at = posts.find(&format!("Child overflows parent {i}")).unwrap();
            prop_assert!(at >= last);
            last = at;
        }
        let next = format!("parent {}", k + 1);
        prop_assert!(!posts.contains(&next));
    }
}
