//! The public suffix list project's own checkPublicSuffix vectors.

use homescope_core::psl::PublicSuffixList;

#[test]
fn upstream_vectors() {
    let text = include_str!("fixtures/psl_test_vectors.txt");
    let psl = PublicSuffixList::bundled();
    let mut failures = Vec::new();
    let mut n = 0;
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(input), Some(want)) = (parts.next(), parts.next()) else { panic!("bad vector line {line:?}") };
        n += 1;
        let got = if input == "null" { None } else { psl.registered_domain(input) };
        let want = (want != "null").then(|| want.to_string());
        if got != want {
            failures.push(format!("{input}: got {got:?}, want {want:?}"));
        }
    }
    assert!(n > 60, "only {n} vectors read");
    assert!(failures.is_empty(), "{} of {n} vectors fail:\n{}", failures.len(), failures.join("\n"));
}
