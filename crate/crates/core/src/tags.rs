//! Extraction of `<tag>...</tag>` fields from model output.
//!
//! Matching is case-sensitive and never nested: the first `<tag>` opens the
//! field and the first `</tag>` after it closes it. A second occurrence of the
//! same tag is reported as a duplicate and ignored.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagLookup<'a> {
    Found { value: &'a str, duplicate: bool },
    /// Opening tag present, closing tag absent.
    Unclosed,
    Missing,
}

/// Look up one tagged field in `text`; the value is trimmed.
pub fn find_tag<'a>(text: &'a str, tag: &str) -> TagLookup<'a> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = text.find(&open) else {
        return TagLookup::Missing;
    };
    let body_start = start + open.len();
    let Some(len) = text[body_start..].find(&close) else {
        return TagLookup::Unclosed;
    };
    let rest = &text[body_start + len + close.len()..];
    TagLookup::Found {
        value: text[body_start..body_start + len].trim(),
        duplicate: rest.contains(&open),
    }
}
