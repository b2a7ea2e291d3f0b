use std::borrow::Cow;

/// Replaces every occurrence of `internal` with `advertised`. Bodies that do
/// not mention `internal` come back borrowed and byte-identical.
pub fn spoof_rewrite<'a>(body: &'a str, internal: &str, advertised: &str) -> Cow<'a, str> {
    if internal.is_empty() || !body.contains(internal) {
        Cow::Borrowed(body)
    } else {
        Cow::Owned(body.replace(internal, advertised))
    }
}

/// Byte-level [`spoof_rewrite`], for bodies that may not be valid UTF-8.
pub fn spoof_rewrite_bytes<'a>(body: &'a [u8], internal: &str, advertised: &str) -> Cow<'a, [u8]> {
    let needle = internal.as_bytes();
    if needle.is_empty() || body.len() < needle.len() {
        return Cow::Borrowed(body);
    }
    let mut out: Option<Vec<u8>> = None;
    let mut last = 0;
    let mut i = 0;
    while i + needle.len() <= body.len() {
        if &body[i..i + needle.len()] == needle {
            let buf = out.get_or_insert_with(|| Vec::with_capacity(body.len()));
            buf.extend_from_slice(&body[last..i]);
            buf.extend_from_slice(advertised.as_bytes());
            i += needle.len();
            last = i;
        } else {
            i += 1;
        }
    }
    match out {
        None => Cow::Borrowed(body),
        Some(mut buf) => {
            buf.extend_from_slice(&body[last..]);
            Cow::Owned(buf)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(hay: &str, needle: &str) -> usize {
        (0..hay.len())
            .filter(|&i| hay[i..].starts_with(needle))
            .count()
    }

    #[test]
    fn single_substitution() {
        assert_eq!(
            spoof_rewrite(
                "go to http://localhost:8888/tree",
                "localhost:8888",
                "notebooks.example.org"
            ),
            "go to http://notebooks.example.org/tree"
        );
    }

    #[test]
    fn untouched_body_is_borrowed() {
        let body = "nothing to see";
        assert!(matches!(
            spoof_rewrite(body, "localhost:8888", "x"),
            Cow::Borrowed(_)
        ));
        assert!(matches!(
            spoof_rewrite_bytes(b"\xff\xfe binary", "localhost:8888", "x"),
            Cow::Borrowed(_)
        ));
    }

    #[test]
    fn three_occurrences() {
        let internal = "127.0.0.1:9000";
        let advertised = "gate.example.org:443";
        let body = format!(
            "<a href=\"http://{internal}/a\">a</a> ws://{internal}/ws {{\"u\":\"{internal}\"}}"
        );
        assert_eq!(count(&body, internal), 3);
        let out = spoof_rewrite(&body, internal, advertised);
        assert_eq!(count(&out, internal), 0);
        assert_eq!(count(&out, advertised), 3);
        assert_eq!(
            spoof_rewrite_bytes(body.as_bytes(), internal, advertised).as_ref(),
            out.as_bytes()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bytes_and_str_agree(parts in proptest::collection::vec("[a-z:./ ]{0,8}", 0..8)) {
                let internal = "lo:88";
                let body = parts.join(internal);
                let s = spoof_rewrite(&body, internal, "pub.example");
                let b = spoof_rewrite_bytes(body.as_bytes(), internal, "pub.example");
                prop_assert_eq!(s.as_bytes(), b.as_ref());
                prop_assert!(!s.contains(internal));
            }

            #[test]
            fn idempotent_when_advertised_is_clean(body in "[a-z0-9:./ ]{0,64}") {
                let internal = "lo:88";
                let advertised = "pub.example:443";
                let once = spoof_rewrite(&body, internal, advertised).into_owned();
                let twice = spoof_rewrite(&once, internal, advertised).into_owned();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
