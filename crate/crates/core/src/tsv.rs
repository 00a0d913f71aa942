//! Field escaping for the tab-separated files used throughout the pipeline.
//!
//! Backslash, tab, newline and carriage return are written as `\\`, `\t`,
//! `\n` and `\r` so any caption survives a round trip.

pub(crate) fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// `None` on a dangling or unknown escape.
pub(crate) fn unescape(field: &str) -> Option<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

/// Splits one line (without its terminator) into raw fields.
pub(crate) fn split_line(line: &str) -> Vec<&str> {
    line.split('\t').collect()
}

/// Lines of a file with any trailing `\r` removed, paired with 1-based
/// line numbers. A final empty line is dropped.
pub(crate) fn numbered_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let total = content.split('\n').count();
    content
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(move |(i, l)| !(l.is_empty() && *i == total))
}
