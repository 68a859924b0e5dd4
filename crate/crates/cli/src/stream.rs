//! Lazy parsing of newline-delimited observations.

use std::io::BufRead;

use crate::CliError;

/// Yields one observation per non-blank line, pulling input only on demand.
///
/// A parse or read error ends the stream; it is kept for [`ObservationStream::finish`].
pub struct ObservationStream<R> {
    lines: std::io::Lines<R>,
    line_no: u64,
    pulled: u64,
    error: Option<CliError>,
}

impl<R: BufRead> ObservationStream<R> {
    pub fn new(reader: R) -> Self {
        ObservationStream { lines: reader.lines(), line_no: 0, pulled: 0, error: None }
    }

    /// Observations handed out so far.
    pub fn pulled(&self) -> u64 {
        self.pulled
    }

    pub fn finish(self) -> Result<u64, CliError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.pulled),
        }
    }
}

impl<R: BufRead> Iterator for &mut ObservationStream<R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.error.is_some() {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.error = Some(CliError::Domain(format!("input: read failed: {e}")));
                    return None;
                }
            };
            self.line_no += 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            return match t.parse::<f64>() {
                Ok(x) => {
                    self.pulled += 1;
                    Some(x)
                }
                Err(_) => {
                    self.error = Some(CliError::Domain(format!("input: line {} is not a number: {t:?}", self.line_no)));
                    None
                }
            };
        }
    }
}
