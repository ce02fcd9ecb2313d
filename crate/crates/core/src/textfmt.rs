//! Helpers for the versioned plain-text model formats.

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip an f64.
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn join_f17(xs: &[f64]) -> String {
    xs.iter().map(|x| f17(*x)).collect::<Vec<_>>().join(" ")
}

/// Line-oriented reader that tracks line numbers for error messages.
pub struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate() }
    }

    /// Next non-empty line.
    pub fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if !l.is_empty() {
                return Ok((i + 1, l));
            }
        }
        Err(Error::Parse("unexpected end of input".into()))
    }

    /// Expects a line `key value...` and returns the remainder.
    pub fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let (n, l) = self.next_line()?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ if l == key => Ok(""),
            _ => Err(Error::Parse(format!("line {n}: expected `{key}`, found {l:?}"))),
        }
    }

    pub fn keyed_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.keyed(key)?;
        v.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
    }

    pub fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        parse_floats(self.keyed(key)?)
    }
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MAX] {
            assert_eq!(f17(x).parse::<f64>().unwrap(), x);
        }
    }
}
