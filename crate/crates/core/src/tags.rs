//! Tag parsing, filtering and version ordering.
//!
//! BioContainers tags follow `version--hash_build` (for example
//! `1.9--h10a08f8_12`). The leading dotted numeric run is the version core;
//! everything after it is build metadata, compared with natural ordering so
//! that `h_10` sorts after `h_9`.

use std::cmp::Ordering;

use globset::{Glob, GlobMatcher};
use thiserror::Error;

use crate::registry::TagList;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("bad tag pattern {pattern:?}: {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: globset::Error,
    },
}

pub type VersionCore = (u64, u64, u64);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagCandidate {
    pub raw: String,
    pub version_core: Option<VersionCore>,
    pub build_meta: Option<String>,
}

impl TagCandidate {
    pub fn parseable(&self) -> bool {
        self.version_core.is_some()
    }
}

/// Splits a raw tag into its version core and trailing build metadata.
pub fn parse_tag(raw: &str) -> TagCandidate {
    let unparseable = || TagCandidate {
        raw: raw.to_string(),
        version_core: None,
        build_meta: None,
    };

    let bytes = raw.as_bytes();
    let mut pos = 0;
    let mut parts = [0u64; 3];
    let mut count = 0;
    while count < 3 {
        let start = if count == 0 {
            0
        } else if bytes.get(pos) == Some(&b'.')
            && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit)
        {
            pos + 1
        } else {
            break;
        };
        let end = start
            + bytes[start..]
                .iter()
                .take_while(|b| b.is_ascii_digit())
                .count();
        if end == start {
            break;
        }
        match raw[start..end].parse::<u64>() {
            Ok(n) => parts[count] = n,
            Err(_) => return unparseable(),
        }
        count += 1;
        pos = end;
    }
    if count == 0 {
        return unparseable();
    }
    let rest = &raw[pos..];
    TagCandidate {
        raw: raw.to_string(),
        version_core: Some((parts[0], parts[1], parts[2])),
        build_meta: (!rest.is_empty()).then(|| rest.to_string()),
    }
}

/// Drops the literal `latest` tag and any tag matching an exclusion glob.
pub fn filter_tags(tags: &TagList, exclusions: &[String]) -> Result<Vec<TagCandidate>, TagError> {
    let matchers = compile_patterns(exclusions)?;
    Ok(tags
        .tags
        .iter()
        .filter(|tag| tag.as_str() != "latest")
        .filter(|tag| !matchers.iter().any(|m| m.is_match(tag.as_str())))
        .map(|tag| parse_tag(tag))
        .collect())
}

pub(crate) fn compile_patterns(patterns: &[String]) -> Result<Vec<GlobMatcher>, TagError> {
    patterns
        .iter()
        .map(|p| {
            Glob::new(p)
                .map(|g| g.compile_matcher())
                .map_err(|source| TagError::BadPattern {
                    pattern: p.clone(),
                    source,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Chunk<'a> {
    Number(&'a str),
    Text(&'a str),
}

fn chunks(s: &str) -> Vec<Chunk<'_>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut start = 0;
    while start < bytes.len() {
        let digit = bytes[start].is_ascii_digit();
        let len = bytes[start..]
            .iter()
            .take_while(|b| b.is_ascii_digit() == digit)
            .count();
        let piece = &s[start..start + len];
        out.push(if digit {
            Chunk::Number(piece)
        } else {
            Chunk::Text(piece)
        });
        start += len;
    }
    out
}

fn cmp_numeric_str(a: &str, b: &str) -> Ordering {
    let a = a.trim_start_matches('0');
    let b = b.trim_start_matches('0');
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Natural ordering: digit runs compare by numeric value, other runs
/// bytewise, and a digit run sorts before a text run at the same position.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(cb.iter()) {
        let ord = match (x, y) {
            (Chunk::Number(x), Chunk::Number(y)) => cmp_numeric_str(x, y),
            (Chunk::Text(x), Chunk::Text(y)) => x.cmp(y),
            (Chunk::Number(_), Chunk::Text(_)) => Ordering::Less,
            (Chunk::Text(_), Chunk::Number(_)) => Ordering::Greater,
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len())
}

/// Total order over candidates, oldest first.
///
/// Unparseable tags rank below every parseable one so the maximum of any
/// set containing a parseable tag is parseable.
pub fn compare_candidates(a: &TagCandidate, b: &TagCandidate) -> Ordering {
    let by_version = match (a.version_core, b.version_core) {
        (Some(x), Some(y)) => x
            .cmp(&y)
            .then_with(|| match (&a.build_meta, &b.build_meta) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(x), Some(y)) => natural_cmp(x, y),
            }),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => natural_cmp(&a.raw, &b.raw),
    };
    by_version.then_with(|| a.raw.cmp(&b.raw))
}

/// Compares two raw tag strings with [`compare_candidates`].
pub fn compare_tags(a: &str, b: &str) -> Ordering {
    compare_candidates(&parse_tag(a), &parse_tag(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagOrdering {
    /// Oldest to newest.
    pub ordered: Vec<TagCandidate>,
    pub latest: Option<TagCandidate>,
}

pub fn sort_and_select(mut candidates: Vec<TagCandidate>) -> TagOrdering {
    candidates.sort_by(compare_candidates);
    let latest = candidates.last().filter(|c| c.parseable()).cloned();
    TagOrdering {
        ordered: candidates,
        latest,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifier::ContainerIdentifier;
    use chrono::Utc;
    use proptest::prelude::*;

    fn tag_list(tags: &[&str]) -> TagList {
        TagList {
            identifier: ContainerIdentifier::parse("quay.io/biocontainers/samtools").unwrap(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            fetched_at: Utc::now(),
        }
    }

    fn raws(candidates: &[TagCandidate]) -> Vec<&str> {
        candidates.iter().map(|c| c.raw.as_str()).collect()
    }

    #[test]
    fn parses_biocontainers_tag() {
        let c = parse_tag("1.9--h10a08f8_12");
        assert_eq!(c.version_core, Some((1, 9, 0)));
        assert_eq!(c.build_meta.as_deref(), Some("--h10a08f8_12"));
        assert!(c.parseable());
        assert_eq!(c.raw, "1.9--h10a08f8_12");
    }

    #[test]
    fn parses_plain_semver() {
        let c = parse_tag("2.30.0");
        assert_eq!(c.version_core, Some((2, 30, 0)));
        assert_eq!(c.build_meta, None);
    }

    #[test]
    fn non_numeric_tags_are_unparseable() {
        for raw in ["latest", "dev", "v1.2", ".1", ""] {
            let c = parse_tag(raw);
            assert!(!c.parseable(), "{raw}");
            assert_eq!(c.build_meta, None);
        }
    }

    #[test]
    fn at_most_three_components() {
        let c = parse_tag("1.2.3.4");
        assert_eq!(c.version_core, Some((1, 2, 3)));
        assert_eq!(c.build_meta.as_deref(), Some(".4"));
        let c = parse_tag("7.");
        assert_eq!(c.version_core, Some((7, 0, 0)));
        assert_eq!(c.build_meta.as_deref(), Some("."));
    }

    #[test]
    fn overflowing_component_is_unparseable() {
        assert!(!parse_tag("99999999999999999999999.1").parseable());
    }

    #[test]
    fn filter_drops_literal_latest() {
        let out = filter_tags(&tag_list(&["1.0", "latest"]), &[]).unwrap();
        assert_eq!(raws(&out), ["1.0"]);
    }

    #[test]
    fn filter_applies_exclusions() {
        let out = filter_tags(&tag_list(&["1.0", "1.1-rc1"]), &["*-rc*".to_string()]).unwrap();
        assert_eq!(raws(&out), ["1.0"]);
    }

    #[test]
    fn filter_patterns_are_anchored() {
        let out = filter_tags(&tag_list(&["1.0", "11.0"]), &["1.*".to_string()]).unwrap();
        assert_eq!(raws(&out), ["11.0"]);
    }

    #[test]
    fn filter_empty_list() {
        assert!(filter_tags(&tag_list(&[]), &[]).unwrap().is_empty());
    }

    #[test]
    fn filter_bad_pattern() {
        let err = filter_tags(&tag_list(&["1.0"]), &["[".to_string()]).unwrap_err();
        assert!(matches!(err, TagError::BadPattern { .. }));
    }

    #[test]
    fn build_number_compares_numerically() {
        let ordering = sort_and_select(
            ["1.9--h_1", "1.9--h_12", "1.10--h_0"]
                .iter()
                .map(|t| parse_tag(t))
                .collect(),
        );
        assert_eq!(
            raws(&ordering.ordered),
            ["1.9--h_1", "1.9--h_12", "1.10--h_0"]
        );
        assert_eq!(ordering.latest.unwrap().raw, "1.10--h_0");
    }

    #[test]
    fn no_latest_without_parseable() {
        let ordering = sort_and_select(vec![parse_tag("latest"), parse_tag("dev")]);
        assert!(ordering.latest.is_none());
        assert_eq!(ordering.ordered.len(), 2);
    }

    #[test]
    fn single_tag_is_latest() {
        let ordering = sort_and_select(vec![parse_tag("0.0.1")]);
        assert_eq!(ordering.latest.unwrap().raw, "0.0.1");
    }

    #[test]
    fn unparseable_rank_below_parseable() {
        assert_eq!(compare_tags("dev", "0.0.1"), Ordering::Less);
        let ordering = sort_and_select(vec![parse_tag("zzz"), parse_tag("0.1")]);
        assert_eq!(raws(&ordering.ordered), ["zzz", "0.1"]);
    }

    #[test]
    fn missing_build_meta_sorts_first() {
        assert_eq!(compare_tags("1.9", "1.9--h1_0"), Ordering::Less);
        assert_eq!(compare_tags("1.9", "1.9.0"), Ordering::Less);
    }

    #[test]
    fn natural_cmp_examples() {
        assert_eq!(natural_cmp("h_9", "h_10"), Ordering::Less);
        assert_eq!(natural_cmp("h_010", "h_10"), Ordering::Equal);
        assert_eq!(natural_cmp("a1", "ab"), Ordering::Less);
        assert_eq!(natural_cmp("", "a"), Ordering::Less);
    }

    fn tag_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            "[0-9]{1,3}(\\.[0-9]{1,3}){0,3}(--[a-z0-9]{1,8}_[0-9]{1,3})?",
            "[0-9]{1,2}\\.[0-9]{1,2}[a-z_.-]{0,3}[0-9]{0,3}",
            "[a-z][a-z0-9._-]{0,8}",
            "0*[0-9]{1,2}[._-]?[a-z]{0,2}[0-9]{0,4}",
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn comparator_is_strict_total_order(a in tag_strategy(), b in tag_strategy(), c in tag_strategy()) {
            let ab = compare_tags(&a, &b);
            prop_assert_eq!(ab, compare_tags(&b, &a).reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if ab != Ordering::Greater && compare_tags(&b, &c) != Ordering::Greater {
                prop_assert_ne!(compare_tags(&a, &c), Ordering::Greater);
            }
        }

        #[test]
        fn natural_build_numbers(n in 0u64..100_000, delta in 1u64..100_000) {
            let m = n + delta;
            prop_assert_eq!(natural_cmp(&format!("h_{n}"), &format!("h_{m}")), Ordering::Less);
        }

        #[test]
        fn sort_is_permutation_and_latest_stable(tags in proptest::collection::hash_set(tag_strategy(), 0..20)) {
            let input: Vec<TagCandidate> = tags.iter().map(|t| parse_tag(t)).collect();
            let first = sort_and_select(input.clone());
            let mut a: Vec<_> = raws(&first.ordered).into_iter().map(String::from).collect();
            let mut b: Vec<_> = tags.iter().cloned().collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let again = sort_and_select(first.ordered.iter().rev().cloned().collect());
            prop_assert_eq!(&again.latest, &first.latest);
            if let Some(latest) = &first.latest {
                for c in &first.ordered {
                    prop_assert_ne!(compare_candidates(c, latest), Ordering::Greater);
                }
            }
        }
    }
}
