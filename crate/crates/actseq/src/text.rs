//! Line-oriented parsing shared by the text formats.

use std::str::FromStr;

/// Malformed input, located by 1-based line and byte offset of that line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line} (byte {offset}): {message}")]
pub struct ParseError {
    pub line: usize,
    pub offset: usize,
    pub message: String,
}

/// Iterates non-empty lines, remembering where each one starts.
pub struct Lines<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
    last: (usize, usize),
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { text, pos: 0, line: 0, last: (0, 0) }
    }

    /// Next line with content, trimmed.
    pub fn next_line(&mut self) -> Option<&'a str> {
        while self.pos < self.text.len() {
            let rest = &self.text[self.pos..];
            let len = rest.find('\n').map_or(rest.len(), |i| i + 1);
            let start = self.pos;
            self.pos += len;
            self.line += 1;
            let content = rest[..len].trim();
            if !content.is_empty() {
                self.last = (self.line, start);
                return Some(content);
            }
        }
        None
    }

    /// Next line or an end-of-input error mentioning `what`.
    pub fn expect_line(&mut self, what: &str) -> Result<&'a str, ParseError> {
        self.next_line().ok_or_else(|| ParseError {
            line: self.line + 1,
            offset: self.text.len(),
            message: format!("input ends where {what} was expected"),
        })
    }

    /// Error located at the most recently returned line.
    pub fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { line: self.last.0, offset: self.last.1, message: message.into() }
    }

    /// Next line, which must start with `keyword`; returns the remaining
    /// whitespace-separated fields.
    pub fn keyword(&mut self, keyword: &str) -> Result<Vec<&'a str>, ParseError> {
        let line = self.expect_line(&format!("`{keyword}`"))?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == keyword => Ok(fields.collect()),
            other => Err(self.error(format!("expected `{keyword}`, found `{}`", other.unwrap_or("")))),
        }
    }

    pub fn parse<T: FromStr>(&self, field: &str, what: &str) -> Result<T, ParseError> {
        field.parse().map_err(|_| self.error(format!("cannot read {what} from `{field}`")))
    }

    /// Parses exactly `n` fields.
    pub fn parse_all<T: FromStr>(&self, fields: &[&str], n: usize, what: &str) -> Result<Vec<T>, ParseError> {
        if fields.len() != n {
            return Err(self.error(format!("expected {n} {what}, found {}", fields.len())));
        }
        fields.iter().map(|f| self.parse(f, what)).collect()
    }
}

/// Space-joined shortest round-trip decimals.
pub fn join_floats(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_report_positions() {
        let text = "a 1\n\n  b 2\n";
        let mut l = Lines::new(text);
        assert_eq!(l.keyword("a").unwrap(), vec!["1"]);
        let err = l.keyword("c").unwrap_err();
        assert_eq!((err.line, err.offset), (3, 5));
        let end = l.expect_line("more").unwrap_err();
        assert_eq!(end.offset, text.len());
    }

    #[test]
    fn floats_round_trip() {
        let v = [0.1, -0.0, 1e-300, f64::MAX, 1.0 / 3.0];
        let s = join_floats(&v);
        let back: Vec<f64> = s.split(' ').map(|x| x.parse().unwrap()).collect();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
