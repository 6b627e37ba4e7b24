use ego_tree::NodeRef;
use scraper::{Html, Node};

// Elements that separate words when their tags are dropped.
const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt", "figcaption", "figure",
    "footer", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "li", "main", "nav", "ol", "p", "pre",
    "section", "table", "td", "th", "tr", "ul",
];

enum Piece {
    Text(String),
    Code(String),
}

/// Strips every tag except `<code>`, decodes entities and collapses
/// whitespace outside code spans.
///
/// Code contents keep their whitespace exactly. A literal `<` is written back
/// as `&lt;` everywhere, so the only `<` left in the output opens or closes a
/// code span.
pub fn clean_html(body: &str) -> String {
    let doc = Html::parse_fragment(body);
    let mut pieces = Vec::new();
    walk(doc.tree.root(), &mut pieces);

    let mut out = String::new();
    let mut pending_space = false;
    for piece in pieces {
        match piece {
            Piece::Text(t) => {
                for ch in t.chars() {
                    if ch.is_whitespace() {
                        pending_space = true;
                    } else {
                        if pending_space && !out.is_empty() {
                            out.push(' ');
                        }
                        pending_space = false;
                        push_escaped(&mut out, ch);
                    }
                }
            }
            Piece::Code(c) => {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push_str("<code>");
                for ch in c.chars() {
                    push_escaped(&mut out, ch);
                }
                out.push_str("</code>");
            }
        }
    }
    out
}

fn push_escaped(out: &mut String, ch: char) {
    if ch == '<' {
        out.push_str("&lt;");
    } else {
        out.push(ch);
    }
}

fn walk(node: NodeRef<'_, Node>, out: &mut Vec<Piece>) {
    for child in node.children() {
        match child.value() {
            Node::Text(t) => out.push(Piece::Text(t.to_string())),
            Node::Element(el) => {
                let name = el.name();
                if name == "code" {
                    let mut text = String::new();
                    inner_text(child, &mut text);
                    out.push(Piece::Code(text));
                } else if matches!(name, "script" | "style") {
                    continue;
                } else {
                    let block = BLOCK_TAGS.contains(&name);
                    if block {
                        out.push(Piece::Text(" ".into()));
                    }
                    walk(child, out);
                    if block {
                        out.push(Piece::Text(" ".into()));
                    }
                }
            }
            _ => {}
        }
    }
}

fn inner_text(node: NodeRef<'_, Node>, out: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(_) => inner_text(child, out),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_code_spans() {
        assert_eq!(
            clean_html("<p>use <code>display:flex</code> here</p>"),
            "use <code>display:flex</code> here"
        );
    }

    #[test]
    fn plain_text_and_entities() {
        assert_eq!(clean_html("plain text"), "plain text");
        assert_eq!(clean_html("<div>a&amp;b</div>"), "a&b");
    }

    #[test]
    fn code_whitespace_is_verbatim() {
        assert_eq!(
            clean_html("<pre><code>.a {\n  width: 1px;\n}</code></pre>\n<p>done</p>"),
            "<code>.a {\n  width: 1px;\n}</code> done"
        );
    }

    #[test]
    fn blocks_separate_words() {
        assert_eq!(clean_html("<p>one</p><p>two</p><ul><li>x</li><li>y</li></ul>"), "one two x y");
    }

    #[test]
    fn angle_brackets_stay_escaped() {
        assert_eq!(clean_html("a &lt; b <code>&lt;div&gt;</code>"), "a &lt; b <code>&lt;div></code>");
        assert_eq!(clean_html("<code><b>x</b> y</code>"), "<code>x y</code>");
    }

    #[test]
    fn drops_scripts() {
        assert_eq!(clean_html("hi<script>alert(1)</script>"), "hi");
    }
}
