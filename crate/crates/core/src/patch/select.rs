use ego_tree::NodeId;
use scraper::{ElementRef, Html, Selector};

use super::{CssPatch, PatchError};

/// Follows a positional xpath (`/html/body/div[2]/p[1]`) from the root.
pub fn resolve_xpath<'a>(doc: &'a Html, xpath: &str) -> Option<ElementRef<'a>> {
    let mut steps = xpath.strip_prefix('/')?.split('/');
    let root = doc.root_element();
    let first = steps.next()?;
    if !first.eq_ignore_ascii_case(root.value().name()) {
        return None;
    }
    let mut current = root;
    for step in steps {
        let (tag, index) = match step.split_once('[') {
            Some((t, rest)) => (t, rest.strip_suffix(']')?.parse::<usize>().ok()?),
            None => (step, 1),
        };
        current = current
            .children()
            .filter_map(ElementRef::wrap)
            .filter(|c| c.value().name().eq_ignore_ascii_case(tag))
            .nth(index.checked_sub(1)?)?;
    }
    Some(current)
}

fn usable_id(el: &ElementRef<'_>) -> Option<String> {
    let id = el.value().id()?;
    let mut chars = id.chars();
    let head_ok = match chars.next()? {
        '-' => chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_'),
        c => c.is_ascii_alphabetic() || c == '_',
    };
    let ok = head_ok && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    ok.then(|| id.to_string())
}

/// Ids of the elements `selector` matches, or `None` if it does not parse.
pub fn selector_matches(doc: &Html, selector: &str) -> Option<Vec<NodeId>> {
    let sel = Selector::parse(selector).ok()?;
    Some(doc.select(&sel).map(|e| e.id()).collect())
}

/// `#id` when the element has one, otherwise an `:nth-child` chain rooted at
/// the nearest ancestor with an id (or at `body`). The result is checked to
/// match exactly this element.
pub fn selector_for(xpath: &str, doc: &Html) -> Result<String, PatchError> {
    let el = resolve_xpath(doc, xpath).ok_or_else(|| PatchError::UnresolvableXpath(xpath.to_string()))?;
    let mut parts: Vec<String> = Vec::new();
    let mut cur = el;
    loop {
        let name = cur.value().name();
        if let Some(id) = usable_id(&cur) {
            parts.push(format!("#{id}"));
            break;
        }
        if name == "body" || name == "html" {
            parts.push(name.to_string());
            break;
        }
        let pos = 1 + cur.prev_siblings().filter(|n| n.value().is_element()).count();
        parts.push(format!("{name}:nth-child({pos})"));
        match cur.parent().and_then(ElementRef::wrap) {
            Some(p) => cur = p,
            None => break,
        }
    }
    parts.reverse();
    let selector = parts.join(" > ");
    match selector_matches(doc, &selector) {
        Some(ids) if ids == [el.id()] => Ok(selector),
        _ => Err(PatchError::AmbiguousSelector(selector)),
    }
}

/// Keeps a rule's selector only if it picks out exactly one of the localized
/// elements; otherwise points the rule at a localized element, preferring
/// one the original selector did match.
pub fn retarget(patch: &CssPatch, localized: &[String], doc: &Html) -> Result<CssPatch, PatchError> {
    let targets: Vec<(&String, NodeId)> = localized
        .iter()
        .filter_map(|x| resolve_xpath(doc, x).map(|e| (x, e.id())))
        .collect();
    let Some(&(fallback, _)) = targets.first() else {
        return Err(PatchError::UnresolvableXpath(localized.first().cloned().unwrap_or_default()));
    };
    let mut out = patch.clone();
    for rule in &mut out.rules {
        let matched = selector_matches(doc, &rule.selector).unwrap_or_default();
        if matched.len() == 1 && targets.iter().any(|(_, id)| *id == matched[0]) {
            continue;
        }
        let xpath = targets
            .iter()
            .find(|(_, id)| matched.contains(id))
            .map_or(fallback, |(x, _)| *x);
        let replacement = selector_for(xpath, doc)?;
        log::debug!("retargeting `{}` to `{replacement}`", rule.selector);
        rule.selector = replacement;
    }
    Ok(out)
}
