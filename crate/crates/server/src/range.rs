//! Single-range `Range: bytes=...` handling.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeOutcome {
    /// No usable range: serve the whole body with 200.
    Full,
    /// Inclusive byte range, already clamped to the file.
    Partial { start: u64, end: u64 },
    /// 416 with `Content-Range: bytes */len`.
    Unsatisfiable,
}

/// Interprets a `Range` header against a body of `len` bytes. Syntax errors,
/// other units and multi-range requests fall back to the full body.
pub fn parse_range(header: Option<&str>, len: u64) -> RangeOutcome {
    let Some(ranges) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return RangeOutcome::Full;
    };
    if ranges.contains(',') {
        return RangeOutcome::Full;
    }
    let Some((first, last)) = ranges.trim().split_once('-') else {
        return RangeOutcome::Full;
    };
    let parse = |s: &str| s.trim().parse::<u64>().ok();
    match (first.trim().is_empty(), last.trim().is_empty()) {
        // bytes=-N: final N bytes
        (true, false) => match parse(last) {
            Some(0) => RangeOutcome::Unsatisfiable,
            Some(n) if len > 0 => RangeOutcome::Partial {
                start: len.saturating_sub(n),
                end: len - 1,
            },
            Some(_) => RangeOutcome::Unsatisfiable,
            None => RangeOutcome::Full,
        },
        (false, true) => match parse(first) {
            Some(start) if start < len => RangeOutcome::Partial { start, end: len - 1 },
            Some(_) => RangeOutcome::Unsatisfiable,
            None => RangeOutcome::Full,
        },
        (false, false) => match (parse(first), parse(last)) {
            (Some(start), Some(end)) if start <= end => {
                if start >= len {
                    RangeOutcome::Unsatisfiable
                } else {
                    RangeOutcome::Partial {
                        start,
                        end: end.min(len - 1),
                    }
                }
            }
            _ => RangeOutcome::Full,
        },
        (true, true) => RangeOutcome::Full,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use RangeOutcome::*;

    #[test]
    fn examples() {
        assert_eq!(parse_range(Some("bytes=0-99"), 1000), Partial { start: 0, end: 99 });
        assert_eq!(parse_range(Some("bytes=990-1100"), 1000), Partial { start: 990, end: 999 });
        assert_eq!(parse_range(Some("bytes=2000-"), 1000), Unsatisfiable);
    }

    #[test]
    fn open_and_suffix_ranges() {
        assert_eq!(parse_range(Some("bytes=500-"), 1000), Partial { start: 500, end: 999 });
        assert_eq!(parse_range(Some("bytes=-100"), 1000), Partial { start: 900, end: 999 });
        assert_eq!(parse_range(Some("bytes=-5000"), 1000), Partial { start: 0, end: 999 });
        assert_eq!(parse_range(Some("bytes=-0"), 1000), Unsatisfiable);
        assert_eq!(parse_range(Some("bytes=1000-1000"), 1000), Unsatisfiable);
        assert_eq!(parse_range(Some("bytes=0-0"), 1), Partial { start: 0, end: 0 });
        assert_eq!(parse_range(Some("bytes=0-"), 0), Unsatisfiable);
    }

    #[test]
    fn ignored_headers() {
        assert_eq!(parse_range(None, 10), Full);
        assert_eq!(parse_range(Some("items=0-5"), 10), Full);
        assert_eq!(parse_range(Some("bytes=0-1,4-5"), 10), Full);
        assert_eq!(parse_range(Some("bytes=5-2"), 10), Full);
        assert_eq!(parse_range(Some("bytes=a-b"), 10), Full);
        assert_eq!(parse_range(Some("bytes=-"), 10), Full);
    }
}
